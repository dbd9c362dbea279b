//! Energies and observables of Schmidt tensor network states.
//!
//! Every local observable is evaluated on its own bra–ket diagram. Stack
//! tensors outside the backward causal cone of the observable cancel against
//! their conjugates and are never contracted; Schmidt wires outside both cones
//! collapse to a shared index (a δ hyperedge between the ket and bra copies of
//! the λ-MPS). The remaining network is ordered by the greedy planner once and
//! replayed on the autodiff tape, so values and gradients share one code path.
//!
//! Translational states are evaluated on a window of unit cells wide enough
//! to hold every cone, with the λ chain closed by the fixed points of the
//! one-cell transfer operator.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{Hamiltonian, SZ};
use crate::schmidt::{expand_plan, mps, Architecture, SchmidtTns, Stack, StackPlan, D_S};
use crate::tensor::{evaluate_with_gradients, plan_greedy, ContractionPlan, Graph, NodeId, Tensor, DEFAULT_MEMORY_CAP};

/// Operator on a set of sites, `2^k × 2^k` row-major with the first site most
/// significant; rows index the bra.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub sites: Vec<usize>,
    pub matrix: Vec<f64>,
}

/// Product of factors on disjoint sites.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    pub factors: Vec<Factor>,
}

impl Observable {
    pub fn single(site: usize, op: [f64; 4]) -> Self {
        Self {
            factors: vec![Factor {
                sites: vec![site],
                matrix: op.to_vec(),
            }],
        }
    }

    pub fn product(site_ops: &[(usize, [f64; 4])]) -> Self {
        Self {
            factors: site_ops
                .iter()
                .map(|(s, m)| Factor {
                    sites: vec![*s],
                    matrix: m.to_vec(),
                })
                .collect(),
        }
    }

    /// One observable per Hamiltonian term: two-site terms first, in order,
    /// then one-site terms.
    pub fn terms_of(h: &Hamiltonian) -> Vec<Observable> {
        let two = h.two_site_terms.iter().map(|t| Observable {
            factors: vec![Factor {
                sites: vec![t.i, t.j],
                matrix: t.matrix.to_vec(),
            }],
        });
        let one = h.one_site_terms.iter().map(|t| Observable::single(t.i, t.matrix));
        two.chain(one).collect()
    }

    fn sites(&self) -> Vec<usize> {
        self.factors.iter().flat_map(|f| f.sites.iter().copied()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    /// Total energy (per unit cell for translational states).
    pub energy: f64,
    /// Energy per lattice edge.
    pub energy_per_bond: f64,
    /// `⟨λ|λ⟩`, or the transfer eigenvalue for translational states.
    pub norm: f64,
    pub edge_count: usize,
    /// Contribution of each Hamiltonian term, ordered as [`Observable::terms_of`].
    pub per_term: Vec<f64>,
}

/// Fixed points of the one-cell λ transfer operator, `χ × χ` row-major with
/// the ket index first.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub eigenvalue: f64,
    pub residual: f64,
}

pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const FIXED_POINT_MAX_ITER: usize = 10_000;

/// Dominant left and right eigenvectors of the cell transfer operator.
pub fn fixed_point(state: &SchmidtTns) -> Result<Environment> {
    if !state.arch.is_translational() {
        return Err(Error::Architecture("fixed points need a translational state".into()));
    }
    let eff = state.lambda_effective();
    let chi = state.arch.bond_dims[0];
    let mut start = vec![0.0; chi * chi];
    for i in 0..chi {
        start[i * chi + i] = 1.0;
    }
    let left = mps::power_iteration(
        start.clone(),
        |x| eff.iter().fold(x.to_vec(), |e, t| mps::push_left(&e, &mps::SiteView::of(t))),
        FIXED_POINT_TOL,
        FIXED_POINT_MAX_ITER,
    )?;
    let right = mps::power_iteration(
        start,
        |x| eff.iter().rev().fold(x.to_vec(), |e, t| mps::push_right(&e, &mps::SiteView::of(t))),
        FIXED_POINT_TOL,
        FIXED_POINT_MAX_ITER,
    )?;
    if !(left.eigenvalue > 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok(Environment {
        left: left.vector,
        right: right.vector,
        eigenvalue: left.eigenvalue,
        residual: left.residual.max(right.residual),
    })
}

#[derive(Clone, Debug)]
enum Source {
    Gate { stack: Stack, param: usize },
    LambdaKet(usize),
    LambdaBra(usize),
    Const(Tensor),
    EnvLeft,
    EnvRight,
}

#[derive(Clone, Debug)]
struct Network {
    sources: Vec<Source>,
    labels: Vec<Vec<String>>,
    plan: ContractionPlan,
}

struct StackLayout {
    plan: StackPlan,
    /// Parameter index of every gate of `plan`.
    params: Vec<usize>,
    cell_wires: usize,
}

/// The circuit that diagrams are drawn on: the architecture itself, or a
/// window of unit cells around a central one.
struct Layout {
    u: StackLayout,
    v: StackLayout,
    r_cell: usize,
    cells: usize,
    /// Bond dimensions of the λ chain over the whole layout.
    bond_dims: Vec<usize>,
    translational: bool,
    site_of: HashMap<usize, (Stack, usize)>,
}

impl Layout {
    fn finite(arch: &Architecture) -> Self {
        let mk = |p: &StackPlan| StackLayout {
            plan: p.clone(),
            params: (0..p.gates.len()).collect(),
            cell_wires: p.n_wires(),
        };
        Self::assemble(mk(&arch.u), mk(&arch.v), arch.r, 1, arch.bond_dims.clone(), false)
    }

    fn window(arch: &Architecture, cells: usize) -> Self {
        let cell_sites = arch.cell.as_ref().map_or(0, |c| c.cell_sites);
        let mk = |p: &StackPlan| {
            let (plan, params) = expand_plan(p, cells, cell_sites);
            StackLayout {
                plan,
                params,
                cell_wires: p.n_wires(),
            }
        };
        let bond_dims = vec![arch.bond_dims[0]; arch.r * cells + 1];
        Self::assemble(mk(&arch.u), mk(&arch.v), arch.r, cells, bond_dims, true)
    }

    fn assemble(u: StackLayout, v: StackLayout, r_cell: usize, cells: usize, bond_dims: Vec<usize>, translational: bool) -> Self {
        let mut site_of = HashMap::new();
        for (s, st) in [(Stack::U, &u), (Stack::V, &v)] {
            for (w, &site) in st.plan.sites.iter().enumerate() {
                site_of.insert(site, (s, w));
            }
        }
        Self {
            u,
            v,
            r_cell,
            cells,
            bond_dims,
            translational,
            site_of,
        }
    }

    fn stack(&self, s: Stack) -> &StackLayout {
        match s {
            Stack::U => &self.u,
            Stack::V => &self.v,
        }
    }

    fn r_total(&self) -> usize {
        self.r_cell * self.cells
    }
}

#[derive(Default)]
struct Labels {
    parent: HashMap<String, String>,
}

impl Labels {
    fn find(&mut self, x: &str) -> String {
        let mut cur = x.to_string();
        while let Some(p) = self.parent.get(&cur) {
            if *p == cur {
                break;
            }
            cur = p.clone();
        }
        cur
    }

    fn merge(&mut self, a: &str, b: &str) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent.insert(rb, ra);
        }
    }
}

struct Builder<'a> {
    layout: &'a Layout,
    sources: Vec<Source>,
    labels: Vec<Vec<String>>,
    shapes: Vec<Vec<usize>>,
    uf: Labels,
}

fn basis0(label: &str) -> Tensor {
    Tensor::new(vec![D_S], vec![label], vec![1.0, 0.0]).expect("static shape")
}

impl<'a> Builder<'a> {
    fn new(layout: &'a Layout) -> Self {
        Self {
            layout,
            sources: Vec::new(),
            labels: Vec::new(),
            shapes: Vec::new(),
            uf: Labels::default(),
        }
    }

    fn push(&mut self, src: Source, labels: Vec<String>, shape: Vec<usize>) {
        self.sources.push(src);
        self.labels.push(labels);
        self.shapes.push(shape);
    }

    fn lambda_chain(&mut self, lo: usize, hi: usize, bra_label: &dyn Fn(usize) -> String) {
        let bd = &self.layout.bond_dims;
        for m in lo..hi {
            let shape = vec![D_S, bd[m], bd[m + 1]];
            self.push(
                Source::LambdaKet(m % self.layout.r_cell),
                vec![format!("r{m}"), format!("a{m}"), format!("a{}", m + 1)],
                shape.clone(),
            );
            self.push(
                Source::LambdaBra(m % self.layout.r_cell),
                vec![bra_label(m), format!("c{m}"), format!("c{}", m + 1)],
                shape,
            );
        }
        if self.layout.translational {
            let chi = bd[lo];
            self.push(Source::EnvLeft, vec![format!("a{lo}"), format!("c{lo}")], vec![chi, chi]);
            self.push(Source::EnvRight, vec![format!("a{hi}"), format!("c{hi}")], vec![chi, chi]);
        } else {
            self.uf.merge(&format!("a{lo}"), &format!("c{lo}"));
            self.uf.merge(&format!("a{hi}"), &format!("c{hi}"));
        }
    }

    fn finish(mut self, memory_cap: usize) -> Result<Network> {
        let labels: Vec<Vec<String>> = std::mem::take(&mut self.labels)
            .into_iter()
            .map(|ls| ls.iter().map(|l| self.uf.find(l)).collect())
            .collect();
        let inputs: Vec<(Vec<String>, Vec<usize>)> = labels.iter().cloned().zip(self.shapes.iter().cloned()).collect();
        let plan = plan_greedy(&inputs, &[], memory_cap)?;
        Ok(Network {
            sources: self.sources,
            labels,
            plan,
        })
    }
}

/// Gates of `st` in the backward causal cone of `wires`, and the final cone.
fn causal_cone(st: &StackPlan, wires: &[usize]) -> (Vec<bool>, Vec<bool>) {
    let mut cone = vec![false; st.n_wires()];
    for &w in wires {
        cone[w] = true;
    }
    let mut in_cone = vec![false; st.gates.len()];
    for (k, g) in st.gates.iter().enumerate().rev() {
        if g.wires.iter().any(|&w| cone[w]) {
            in_cone[k] = true;
            for &w in &g.wires {
                cone[w] = true;
            }
        }
    }
    (in_cone, cone)
}

struct TermDiagram {
    network: Network,
    /// λ bond range `[lo, hi)` covered by the diagram.
    range: (usize, usize),
}

fn term_diagram(layout: &Layout, obs: &Observable, memory_cap: usize, center: usize) -> Result<Option<TermDiagram>> {
    let stacks = [Stack::U, Stack::V];
    let mut op_wires: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut seen = Vec::new();
    for site in obs.sites() {
        if seen.contains(&site) {
            return Err(Error::Hamiltonian(format!("site {site} appears twice in one observable")));
        }
        seen.push(site);
        let &(s, w) = layout
            .site_of
            .get(&site)
            .ok_or_else(|| Error::Hamiltonian(format!("site {site} is not part of the state")))?;
        op_wires[s as usize].push(w);
    }
    let cones: Vec<(Vec<bool>, Vec<bool>)> = stacks
        .iter()
        .map(|&s| causal_cone(&layout.stack(s).plan, &op_wires[s as usize]))
        .collect();

    if layout.translational {
        for (i, &s) in stacks.iter().enumerate() {
            let st = layout.stack(s);
            let last = layout.cells - 1;
            if cones[i].1.iter().enumerate().any(|(w, &c)| c && (w / st.cell_wires == 0 || w / st.cell_wires == last)) {
                return Ok(None);
            }
        }
    }

    let r_total = layout.r_total();
    let schmidt_in = |i: usize, m: usize| cones[i].1[layout.stack(stacks[i]).plan.schmidt_wires[m]];
    let distinct: Vec<bool> = (0..r_total).map(|m| schmidt_in(0, m) && schmidt_in(1, m)).collect();
    let bra_r = |m: usize| if distinct[m] { format!("q{m}") } else { format!("r{m}") };

    let (lo, hi) = if layout.translational {
        let touched: Vec<usize> = (0..r_total).filter(|&m| schmidt_in(0, m) || schmidt_in(1, m)).collect();
        let cell_lo = touched.first().map_or(center, |&m| (m / layout.r_cell).min(center));
        let cell_hi = touched.last().map_or(center, |&m| (m / layout.r_cell).max(center));
        (cell_lo * layout.r_cell, (cell_hi + 1) * layout.r_cell)
    } else {
        (0, r_total)
    };

    let mut b = Builder::new(layout);
    b.lambda_chain(lo, hi, &bra_r);

    let mut finals: [HashMap<usize, (String, String)>; 2] = [HashMap::new(), HashMap::new()];
    for (i, &s) in stacks.iter().enumerate() {
        let st = layout.stack(s);
        let tag = if s == Stack::U { 'u' } else { 'v' };
        let n = st.plan.n_wires();
        let mut version = vec![0usize; n];
        let mut cur: Vec<Option<(String, String)>> = vec![None; n];
        for w in 0..n {
            if !cones[i].1[w] {
                continue;
            }
            if let Some(m) = st.plan.schmidt_wires.iter().position(|&x| x == w) {
                cur[w] = Some((format!("r{m}"), bra_r(m)));
            } else {
                let (k, br) = (format!("{tag}k{w}_0"), format!("{tag}b{w}_0"));
                b.push(Source::Const(basis0(&k)), vec![k.clone()], vec![D_S]);
                b.push(Source::Const(basis0(&br)), vec![br.clone()], vec![D_S]);
                cur[w] = Some((k, br));
            }
        }
        for (g, gate) in st.plan.gates.iter().enumerate() {
            if !cones[i].0[g] {
                continue;
            }
            let k = gate.wires.len();
            let mut ket = Vec::with_capacity(2 * k);
            let mut bra = Vec::with_capacity(2 * k);
            let mut ket_in = Vec::with_capacity(k);
            let mut bra_in = Vec::with_capacity(k);
            for &w in &gate.wires {
                version[w] += 1;
                let (ki, bi) = cur[w].clone().expect("cone wires are initialized");
                let (ko, bo) = (format!("{tag}k{w}_{}", version[w]), format!("{tag}b{w}_{}", version[w]));
                ket.push(ko.clone());
                bra.push(bo.clone());
                ket_in.push(ki);
                bra_in.push(bi);
                cur[w] = Some((ko, bo));
            }
            ket.extend(ket_in);
            bra.extend(bra_in);
            let param = st.params[g];
            b.push(Source::Gate { stack: s, param }, ket, vec![D_S; 2 * k]);
            b.push(Source::Gate { stack: s, param }, bra, vec![D_S; 2 * k]);
        }
        for w in 0..n {
            if let Some((k, br)) = cur[w].take() {
                if op_wires[i].contains(&w) {
                    finals[i].insert(w, (k, br));
                } else {
                    b.uf.merge(&k, &br);
                }
            }
        }
    }

    for f in &obs.factors {
        let k = f.sites.len();
        if f.matrix.len() != 1 << (2 * k) {
            return Err(Error::LengthMismatch {
                expected: 1 << (2 * k),
                actual: f.matrix.len(),
            });
        }
        let mut bra = Vec::with_capacity(2 * k);
        let mut ket = Vec::with_capacity(k);
        for site in &f.sites {
            let (s, w) = layout.site_of[site];
            let (kl, bl) = finals[s as usize][&w].clone();
            bra.push(bl);
            ket.push(kl);
        }
        bra.extend(ket);
        let t = Tensor::new(vec![D_S; 2 * k], bra.clone(), f.matrix.clone())?;
        b.push(Source::Const(t), bra, vec![D_S; 2 * k]);
    }
    Ok(Some(TermDiagram {
        network: b.finish(memory_cap)?,
        range: (lo, hi),
    }))
}

fn norm_network(layout: &Layout, range: (usize, usize), memory_cap: usize) -> Result<Network> {
    let mut b = Builder::new(layout);
    b.lambda_chain(range.0, range.1, &|m| format!("r{m}"));
    b.finish(memory_cap)
}

/// Replays a network on the tape. `leaves` are the raw parameters in the
/// order U gates, V gates, λ sites.
fn replay(net: &Network, state: &SchmidtTns, env: Option<&Environment>, g: &mut Graph, leaves: &[NodeId]) -> Result<NodeId> {
    let (nu, nv) = (state.u.len(), state.v.len());
    let mut squared: HashMap<usize, NodeId> = HashMap::new();
    let mut slots: Vec<Option<NodeId>> = Vec::with_capacity(net.sources.len() + net.plan.steps.len());
    let chi = state.arch.bond_dims[0];
    for (src, labels) in net.sources.iter().zip(&net.labels) {
        let id = match src {
            Source::Gate { stack, param } => {
                let leaf = leaves[if *stack == Stack::U { *param } else { nu + *param }];
                g.relabel(leaf, labels)?
            }
            Source::LambdaKet(p) | Source::LambdaBra(p) => {
                let sq = match squared.get(p) {
                    Some(&id) => id,
                    None => {
                        let id = g.square(leaves[nu + nv + *p])?;
                        squared.insert(*p, id);
                        id
                    }
                };
                g.relabel(sq, labels)?
            }
            Source::Const(t) => g.constant(t.relabeled(labels)?),
            Source::EnvLeft | Source::EnvRight => {
                let env = env.ok_or_else(|| Error::Architecture("translational evaluation needs an environment".into()))?;
                let data = if matches!(src, Source::EnvLeft) { &env.left } else { &env.right };
                g.constant(Tensor::new(vec![chi, chi], labels.clone(), data.clone())?)
            }
        };
        slots.push(Some(id));
    }
    for step in &net.plan.steps {
        let a = slots[step.a].take().expect("plan consumes each slot once");
        let b = slots[step.b].take().expect("plan consumes each slot once");
        let id = g.einsum(a, b, &step.out)?;
        slots.push(Some(id));
    }
    Ok(slots[net.plan.result].expect("plan result slot"))
}

fn all_params(state: &SchmidtTns) -> Vec<crate::tensor::Parameter> {
    state.parameters().cloned().collect()
}

fn run(net: &Network, state: &SchmidtTns, env: Option<&Environment>, params: &[crate::tensor::Parameter], grads: bool) -> Result<(f64, Option<Vec<Tensor>>)> {
    if grads {
        let (v, g) = evaluate_with_gradients(params, |g, leaves| replay(net, state, env, g, leaves))?;
        Ok((v, Some(g)))
    } else {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = params.iter().map(|p| g.constant(p.raw.clone())).collect();
        let out = replay(net, state, env, &mut g, &leaves)?;
        Ok((g.value(out).item(), None))
    }
}

struct Term {
    network: Network,
    norm: usize,
}

/// Cached diagrams for one architecture and a fixed list of observables.
pub struct Evaluator {
    arch: Architecture,
    terms: Vec<Term>,
    norms: Vec<Network>,
    edge_count: usize,
}

impl Evaluator {
    pub fn new(arch: &Architecture, observables: &[Observable], edge_count: usize, memory_cap: usize) -> Result<Self> {
        arch.validate()?;
        let mut terms = Vec::with_capacity(observables.len());
        let mut lengths: Vec<usize> = Vec::new();
        let mut norms = Vec::new();
        let finite = Layout::finite(arch);
        let mut windows: Vec<(usize, Layout)> = Vec::new();
        for obs in observables {
            let diagram = if arch.is_translational() {
                let mut half = 2;
                loop {
                    if windows.iter().all(|(h, _)| *h != half) {
                        windows.push((half, Layout::window(arch, 2 * half + 1)));
                    }
                    let layout = &windows.iter().find(|(h, _)| *h == half).expect("inserted").1;
                    let cell_sites = arch.cell.as_ref().expect("translational").cell_sites;
                    let shifted = Observable {
                        factors: obs
                            .factors
                            .iter()
                            .map(|f| Factor {
                                sites: f.sites.iter().map(|&s| s + half * cell_sites).collect(),
                                matrix: f.matrix.clone(),
                            })
                            .collect(),
                    };
                    if let Some(d) = term_diagram(layout, &shifted, memory_cap, half)? {
                        // all bonds are equal and λ repeats per cell, so the
                        // norm diagram depends only on the length of the range
                        let len = d.range.1 - d.range.0;
                        let norm = match lengths.iter().position(|&x| x == len) {
                            Some(i) => i,
                            None => {
                                lengths.push(len);
                                norms.push(norm_network(layout, d.range, memory_cap)?);
                                lengths.len() - 1
                            }
                        };
                        break Term { network: d.network, norm };
                    }
                    half += 1;
                    if half > 64 {
                        return Err(Error::Architecture("causal cone does not fit any evaluation window".into()));
                    }
                }
            } else {
                let d = term_diagram(&finite, obs, memory_cap, 0)?.expect("finite diagrams always fit");
                if norms.is_empty() {
                    norms.push(norm_network(&finite, d.range, memory_cap)?);
                }
                Term { network: d.network, norm: 0 }
            };
            terms.push(diagram);
        }
        if norms.is_empty() && !arch.is_translational() {
            norms.push(norm_network(&finite, (0, arch.r), memory_cap)?);
        }
        Ok(Self {
            arch: arch.clone(),
            terms,
            norms,
            edge_count,
        })
    }

    pub fn for_hamiltonian(arch: &Architecture, h: &Hamiltonian) -> Result<Self> {
        if h.infinite != arch.is_translational() {
            return Err(Error::Hamiltonian("Hamiltonian and architecture disagree on translational invariance".into()));
        }
        Self::new(arch, &Observable::terms_of(h), h.edge_count, DEFAULT_MEMORY_CAP)
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Largest intermediate over all diagrams, in elements.
    pub fn peak_elements(&self) -> usize {
        self.terms
            .iter()
            .map(|t| &t.network)
            .chain(&self.norms)
            .map(|n| n.plan.peak_elements)
            .max()
            .unwrap_or(0)
    }

    fn check(&self, state: &SchmidtTns) -> Result<()> {
        if state.arch != self.arch {
            return Err(Error::Architecture("state architecture differs from the evaluator's".into()));
        }
        Ok(())
    }

    fn compute(&self, state: &SchmidtTns, env: Option<&Environment>, grads: bool) -> Result<(EnergyReport, Option<Vec<Tensor>>)> {
        self.check(state)?;
        let owned_env;
        let env = if state.arch.is_translational() {
            match env {
                Some(e) => Some(e),
                None => {
                    owned_env = fixed_point(state)?;
                    Some(&owned_env)
                }
            }
        } else {
            None
        };
        let params = all_params(state);
        let norms: Vec<(f64, Option<Vec<Tensor>>)> = self
            .norms
            .par_iter()
            .map(|n| run(n, state, env, &params, grads && !self.terms.is_empty()))
            .collect::<Result<_>>()?;
        for (z, _) in &norms {
            if !(*z > 0.0) || !z.is_finite() {
                return Err(Error::ZeroNorm);
            }
        }
        let nums: Vec<(f64, Option<Vec<Tensor>>)> = self
            .terms
            .par_iter()
            .map(|t| run(&t.network, state, env, &params, grads))
            .collect::<Result<_>>()?;

        let per_term: Vec<f64> = nums
            .iter()
            .zip(&self.terms)
            .map(|((num, _), t)| num / norms[t.norm].0)
            .collect();
        let energy: f64 = per_term.iter().sum();
        if !energy.is_finite() {
            return Err(Error::NonFinite("energy"));
        }
        let gradient = if grads {
            let mut total: Vec<Tensor> = params.iter().map(|p| p.raw.map(|_| 0.0)).collect();
            let mut norm_coeff = vec![0.0; self.norms.len()];
            for ((num, g), t) in nums.iter().zip(&self.terms) {
                let z = norms[t.norm].0;
                axpy(&mut total, 1.0 / z, g.as_ref().expect("requested"));
                norm_coeff[t.norm] -= num / (z * z);
            }
            for ((_, g), c) in norms.iter().zip(norm_coeff) {
                if let Some(g) = g {
                    axpy(&mut total, c, g);
                }
            }
            Some(total)
        } else {
            None
        };
        let norm = match env {
            Some(e) => e.eigenvalue,
            None => norms[0].0,
        };
        Ok((
            EnergyReport {
                energy,
                energy_per_bond: energy / self.edge_count.max(1) as f64,
                norm,
                edge_count: self.edge_count,
                per_term,
            },
            gradient,
        ))
    }

    /// Energies of all terms. Translational states use `env` when given
    /// (frozen environments) and fresh fixed points otherwise.
    pub fn evaluate(&self, state: &SchmidtTns, env: Option<&Environment>) -> Result<EnergyReport> {
        Ok(self.compute(state, env, false)?.0)
    }

    /// Energy and `∂E/∂raw` for every parameter in the order U gates, V gates,
    /// λ sites. The division by the norm is differentiated; environments are
    /// held fixed.
    pub fn evaluate_with_gradients(&self, state: &SchmidtTns, env: Option<&Environment>) -> Result<(EnergyReport, Vec<Tensor>)> {
        let (r, g) = self.compute(state, env, true)?;
        Ok((r, g.expect("requested")))
    }
}

fn axpy(acc: &mut [Tensor], c: f64, g: &[Tensor]) {
    if c == 0.0 {
        return;
    }
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += c * y;
        }
    }
}

/// `⟨Ψ|H|Ψ⟩ / ⟨λ|λ⟩` for a finite state.
pub fn energy(state: &SchmidtTns, h: &Hamiltonian) -> Result<EnergyReport> {
    if state.arch.is_translational() {
        return Err(Error::Architecture("translational states are evaluated with infinite_energy".into()));
    }
    Evaluator::for_hamiltonian(&state.arch, h)?.evaluate(state, None)
}

/// Energy per cell and per edge of a translational state.
pub fn infinite_energy(state: &SchmidtTns, h: &Hamiltonian) -> Result<EnergyReport> {
    let env = fixed_point(state)?;
    Evaluator::for_hamiltonian(&state.arch, h)?.evaluate(state, Some(&env))
}

/// `⟨Ψ|∏ O_i|Ψ⟩ / ⟨Ψ|Ψ⟩` for single-site operators on distinct sites (sites
/// of the reference cell and the next one for translational states).
pub fn expectation(state: &SchmidtTns, site_ops: &[(usize, [f64; 4])]) -> Result<f64> {
    let ev = Evaluator::new(&state.arch, &[Observable::product(site_ops)], 0, DEFAULT_MEMORY_CAP)?;
    Ok(ev.evaluate(state, None)?.energy)
}

/// `⟨S^z_i⟩` for every site (of one cell for translational states).
pub fn magnetization(state: &SchmidtTns) -> Result<Vec<f64>> {
    let n = state.arch.n_sites();
    let obs: Vec<Observable> = (0..n).map(|i| Observable::single(i, SZ)).collect();
    let ev = Evaluator::new(&state.arch, &obs, 0, DEFAULT_MEMORY_CAP)?;
    Ok(ev.evaluate(state, None)?.per_term)
}

/// `M = |Σ_i ⟨S^z_i⟩| / N`.
pub fn average_magnetization(state: &SchmidtTns) -> Result<f64> {
    let m = magnetization(state)?;
    Ok(m.iter().sum::<f64>().abs() / m.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_hamiltonian, build_zpaf, build_zpaf_fragment, Boundary, ModelKind, ModelParams, SX};
    use crate::oracle::apply_hamiltonian;
    use crate::schmidt::{init_state, init_state_with_noise, materialize, LAMBDA_AXES};

    fn product_zero(state: &mut SchmidtTns) {
        for p in &mut state.lambda {
            let s = p.raw.shape().to_vec();
            let mut data = vec![0.0; s.iter().product()];
            data[0] = 1.0;
            p.raw = Tensor::new(s, LAMBDA_AXES.to_vec(), data).unwrap();
        }
    }

    fn dense_energy(state: &SchmidtTns, h: &Hamiltonian) -> f64 {
        let v = materialize(state).unwrap();
        let hv = apply_hamiltonian(h, &v).unwrap();
        let num: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
        num / v.iter().map(|x| x * x).sum::<f64>()
    }

    #[test]
    fn product_state_energies() {
        let (l, b) = build_zpaf(1, Boundary::Open).unwrap();
        let a = Architecture::brick_wall(&l, &b, 2, 2).unwrap();
        let mut s = init_state_with_noise(&a, 0, 0.0).unwrap();
        product_zero(&mut s);
        for (kind, hx) in [(ModelKind::Tim, Some(0.7)), (ModelKind::Heisenberg, None), (ModelKind::Tim, Some(0.0))] {
            let h = build_hamiltonian(&l, kind, ModelParams { h_x: hx }).unwrap();
            let r = energy(&s, &h).unwrap();
            assert!((r.energy_per_bond - 0.25).abs() < 1e-14, "{kind:?}: {}", r.energy_per_bond);
            assert!((r.energy_per_bond * r.edge_count as f64 - r.energy).abs() < 1e-12);
        }
        assert!((expectation(&s, &[(0, SZ)]).unwrap() - 0.5).abs() < 1e-15);
        assert!(expectation(&s, &[(4, SX)]).unwrap().abs() < 1e-15);
        assert_eq!(magnetization(&s).unwrap(), vec![0.5; 9]);
        assert!((average_magnetization(&s).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_dense_oracle() {
        for (n, layers, chi, seed) in [(10, 2, 2, 1), (8, 3, 4, 2), (12, 2, 3, 3), (9, 1, 1, 4)] {
            let (l, b) = build_zpaf_fragment(n).unwrap();
            let a = Architecture::brick_wall(&l, &b, layers, chi).unwrap();
            let mut s = init_state(&a, seed).unwrap();
            for p in &mut s.lambda {
                p.raw = p.raw.scaled(1.7);
            }
            for (kind, hx) in [(ModelKind::Heisenberg, None), (ModelKind::Tim, Some(0.4)), (ModelKind::Xy, None)] {
                let h = build_hamiltonian(&l, kind, ModelParams { h_x: hx }).unwrap();
                let e = energy(&s, &h).unwrap().energy;
                let want = dense_energy(&s, &h);
                assert!(((e - want) / want).abs() < 1e-9, "N={n} {kind:?}: {e} vs {want}");
            }
            let v = materialize(&s).unwrap();
            let z: f64 = v.iter().map(|x| x * x).sum();
            let ops = [(0, SX), (n - 1, SZ), (n / 2, SX)];
            let mut w = v.clone();
            for (site, op) in ops {
                let bit = n - 1 - site;
                let mut next = vec![0.0; w.len()];
                for (x, &amp) in w.iter().enumerate() {
                    let b = (x >> bit) & 1;
                    for o in 0..2 {
                        next[(x & !(1 << bit)) | (o << bit)] += op[o * 2 + b] * amp;
                    }
                }
                w = next;
            }
            let want: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / z;
            let got = expectation(&s, &ops).unwrap();
            assert!((got - want).abs() < 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn gates_outside_every_cone_cancel() {
        let (l, b) = build_zpaf_fragment(10).unwrap();
        let a = Architecture::brick_wall(&l, &b, 2, 2).unwrap();
        let s = init_state(&a, 5).unwrap();
        // a single-site observable on U wire 0 never sees V
        let site = a.u.sites[0];
        let e0 = expectation(&s, &[(site, SX)]).unwrap();
        let mut t = s.clone();
        let other = init_state(&a, 99).unwrap();
        t.v = other.v.clone();
        assert!((expectation(&t, &[(site, SX)]).unwrap() - e0).abs() < 1e-12);
        // and the dense oracle agrees after substitution
        let h = build_hamiltonian(&l, ModelKind::Heisenberg, ModelParams::default()).unwrap();
        let e = energy(&t, &h).unwrap().energy;
        let want = dense_energy(&t, &h);
        assert!(((e - want) / want).abs() < 1e-10);
    }

    #[test]
    fn lambda_scale_invariance() {
        let (l, b) = build_zpaf_fragment(9).unwrap();
        let a = Architecture::brick_wall(&l, &b, 2, 3).unwrap();
        let s = init_state(&a, 6).unwrap();
        let h = build_hamiltonian(&l, ModelKind::Heisenberg, ModelParams::default()).unwrap();
        let e = energy(&s, &h).unwrap().energy;
        let mut t = s.clone();
        for p in &mut t.lambda {
            p.raw = p.raw.scaled(3.0);
        }
        assert!((energy(&t, &h).unwrap().energy - e).abs() < 1e-10);
    }

    #[test]
    fn memory_cap_is_reported() {
        let (l, b) = build_zpaf_fragment(12).unwrap();
        let a = Architecture::brick_wall(&l, &b, 3, 4).unwrap();
        let h = build_hamiltonian(&l, ModelKind::Heisenberg, ModelParams::default()).unwrap();
        let r = Evaluator::new(&a, &Observable::terms_of(&h), h.edge_count, 64);
        assert!(matches!(r, Err(Error::MemoryCap { .. })));
    }

    #[test]
    fn zero_hamiltonian_has_zero_gradient() {
        let (l, b) = build_zpaf_fragment(8).unwrap();
        let a = Architecture::brick_wall(&l, &b, 2, 2).unwrap();
        let s = init_state(&a, 1).unwrap();
        let ev = Evaluator::for_hamiltonian(&a, &Hamiltonian::zero(8)).unwrap();
        let (r, g) = ev.evaluate_with_gradients(&s, None).unwrap();
        assert_eq!(r.energy, 0.0);
        assert!(g.iter().all(|t| t.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let (l, b) = build_zpaf_fragment(8).unwrap();
        let a = Architecture::brick_wall(&l, &b, 2, 2).unwrap();
        let s = init_state(&a, 11).unwrap();
        let h = build_hamiltonian(&l, ModelKind::Tim, ModelParams { h_x: Some(0.3) }).unwrap();
        let ev = Evaluator::for_hamiltonian(&a, &h).unwrap();
        let (_, grads) = ev.evaluate_with_gradients(&s, None).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n_params = s.parameters().count();
        for _ in 0..20 {
            let p = rng.gen_range(0..n_params);
            let k = rng.gen_range(0..grads[p].len());
            let eps = 1e-5;
            let shifted = |d: f64| {
                let mut t = s.clone();
                let param = t.parameters_mut().nth(p).unwrap();
                param.raw.data_mut()[k] += d;
                ev.evaluate(&t, None).unwrap().energy
            };
            let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let g = grads[p].data()[k];
            assert!((fd - g).abs() <= 1e-6 * g.abs().max(1e-2), "param {p}[{k}]: {g} vs {fd}");
        }
    }

    fn product_cell(noise: f64) -> (SchmidtTns, crate::lattice::Lattice) {
        let (l, b) = build_zpaf(1, Boundary::Infinite).unwrap();
        let a = Architecture::translational(&l, &b, 0, 1).unwrap();
        let mut s = init_state_with_noise(&a, 0, noise).unwrap();
        product_zero(&mut s);
        (s, l)
    }

    #[test]
    fn product_cell_environment() {
        let (s, _) = product_cell(0.0);
        let env = fixed_point(&s).unwrap();
        assert!((env.eigenvalue - 1.0).abs() < 1e-14);
        assert_eq!(env.left.len(), 1);
        assert!(env.residual < 1e-10);
    }

    #[test]
    fn product_cell_energies() {
        let (mut s, l) = product_cell(0.0);
        let h = build_hamiltonian(&l, ModelKind::Tim, ModelParams { h_x: Some(0.6) }).unwrap();
        let r = infinite_energy(&s, &h).unwrap();
        assert_eq!(r.edge_count, 11);
        assert!((r.energy_per_bond - 0.25).abs() < 1e-14);
        // rotate every physical tensor to the +x eigenvector
        let c = 0.5f64.sqrt();
        for p in s.u.iter_mut().chain(s.v.iter_mut()) {
            p.raw = Tensor::new(vec![2, 2], vec!["o0", "i0"], vec![c, -c, c, c]).unwrap();
        }
        let r = infinite_energy(&s, &h).unwrap();
        let want = (0.0 - 0.6 * 9.0 / 2.0) / 11.0;
        assert!((r.energy_per_bond - want).abs() < 1e-14, "{}", r.energy_per_bond);
    }

    #[test]
    fn infinite_matches_long_finite_chain() {
        let (l, b) = build_zpaf(1, Boundary::Infinite).unwrap();
        let a = Architecture::translational(&l, &b, 2, 2).unwrap();
        let s = init_state(&a, 21).unwrap();
        let h_inf = build_hamiltonian(&l, ModelKind::Heisenberg, ModelParams::default()).unwrap();
        let inf = infinite_energy(&s, &h_inf).unwrap();

        let cells = 12;
        let chain = s.finite_chain(cells).unwrap();
        let (lf, _) = build_zpaf(cells, Boundary::Open).unwrap();
        let h = build_hamiltonian(&lf, ModelKind::Heisenberg, ModelParams::default()).unwrap();
        let mid = cells / 2;
        let lo = mid * 9;
        let obs: Vec<Observable> = Observable::terms_of(&h)
            .into_iter()
            .filter(|o| o.factors[0].sites[0] >= lo && o.factors[0].sites[0] < lo + 9)
            .collect();
        assert_eq!(obs.len(), 11);
        let ev = Evaluator::new(&chain.arch, &obs, 11, DEFAULT_MEMORY_CAP).unwrap();
        let fin = ev.evaluate(&chain, None).unwrap();
        assert!((fin.energy_per_bond - inf.energy_per_bond).abs() < 1e-6, "{} vs {}", fin.energy_per_bond, inf.energy_per_bond);
    }

    #[test]
    fn infinite_gradient_with_frozen_environment() {
        let (l, b) = build_zpaf(1, Boundary::Infinite).unwrap();
        let a = Architecture::translational(&l, &b, 1, 2).unwrap();
        let s = init_state(&a, 2).unwrap();
        let h = build_hamiltonian(&l, ModelKind::Tim, ModelParams { h_x: Some(0.5) }).unwrap();
        let ev = Evaluator::for_hamiltonian(&a, &h).unwrap();
        let env = fixed_point(&s).unwrap();
        let (_, grads) = ev.evaluate_with_gradients(&s, Some(&env)).unwrap();
        let eps = 1e-5;
        for (p, k) in [(0, 3), (s.u.len() + 2, 5), (s.u.len() + s.v.len() + 1, 4)] {
            let shifted = |d: f64| {
                let mut t = s.clone();
                t.parameters_mut().nth(p).unwrap().raw.data_mut()[k] += d;
                ev.evaluate(&t, Some(&env)).unwrap().energy
            };
            let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            assert!((fd - grads[p].data()[k]).abs() < 1e-7 * fd.abs().max(1.0));
        }
    }
}
