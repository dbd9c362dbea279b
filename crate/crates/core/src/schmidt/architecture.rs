use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Bipartition, Lattice};

/// Dimension of every Schmidt, virtual and physical wire.
pub const D_S: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stack {
    /// Left transformation, acting on part A.
    U,
    /// Right transformation, acting on part B.
    V,
}

/// One local orthogonal tensor. It maps its wires' incoming states to
/// outgoing states (equal total dimension on both sides). A physical gate is
/// the last tensor on its single wire and carries that wire's spin index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSpec {
    pub wires: Vec<usize>,
    pub layer: usize,
    pub physical: bool,
}

/// Circuit description of one stack.
///
/// Wires `schmidt_wires[m]` start in `|r_m⟩`, every other wire starts in
/// `|0⟩`. After `gates` (in order) wire `w` holds the spin on `sites[w]`.
/// For translational architectures all indices are relative to one unit cell
/// and a gate wire `w >= sites.len()` refers to wire `w - width` of the next
/// cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackPlan {
    pub sites: Vec<usize>,
    pub schmidt_wires: Vec<usize>,
    pub gates: Vec<GateSpec>,
}

impl StackPlan {
    pub fn n_wires(&self) -> usize {
        self.sites.len()
    }

    /// Brick-wall entangling layers over the wire order followed by one
    /// physical layer of single-wire tensors.
    pub fn brick_wall(sites: Vec<usize>, r: usize, n_layers: usize) -> Self {
        let n = sites.len();
        let mut gates = Vec::new();
        for layer in 0..n_layers {
            let mut j = layer % 2;
            while j + 1 < n {
                gates.push(GateSpec {
                    wires: vec![j, j + 1],
                    layer,
                    physical: false,
                });
                j += 2;
            }
        }
        push_physical(&mut gates, n, n_layers);
        Self {
            schmidt_wires: spread(n, r),
            sites,
            gates,
        }
    }

    /// Cell template of a translation-invariant brick wall; the gate on the
    /// last wire of a cell reaches into the next cell.
    pub fn brick_wall_cell(sites: Vec<usize>, r: usize, n_layers: usize) -> Self {
        let n = sites.len();
        let mut gates = Vec::new();
        for layer in 0..n_layers {
            let mut j = layer % 2;
            while j < n {
                gates.push(GateSpec {
                    wires: vec![j, j + 1],
                    layer,
                    physical: false,
                });
                j += 2;
            }
        }
        push_physical(&mut gates, n, n_layers);
        Self {
            schmidt_wires: spread(n, r),
            sites,
            gates,
        }
    }
}

fn push_physical(gates: &mut Vec<GateSpec>, n: usize, n_layers: usize) {
    for w in 0..n {
        gates.push(GateSpec {
            wires: vec![w],
            layer: n_layers,
            physical: true,
        });
    }
}

/// `r` wires spread evenly over `n`.
fn spread(n: usize, r: usize) -> Vec<usize> {
    if r == n {
        return (0..n).collect();
    }
    (0..r).map(|m| (2 * m + 1) * n / (2 * r)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellInfo {
    /// Lattice sites per unit cell.
    pub cell_sites: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Number of binary Schmidt indices (per cell when translational).
    pub r: usize,
    pub n_layers: usize,
    pub chi: usize,
    pub u: StackPlan,
    pub v: StackPlan,
    /// Finite: `r + 1` virtual bond dimensions with unit boundaries.
    /// Translational: `r + 1` entries, all `chi`.
    pub bond_dims: Vec<usize>,
    pub cell: Option<CellInfo>,
}

impl Architecture {
    /// Default layered architecture for a finite lattice: `U` on part A,
    /// `V` on part B, `R = min(|A|, |B|)`.
    pub fn brick_wall(lattice: &Lattice, bip: &Bipartition, n_layers: usize, chi: usize) -> Result<Self> {
        if lattice.is_infinite() {
            return Err(Error::Architecture("use `translational` for infinite lattices".into()));
        }
        let r = bip.r_tilde;
        let arch = Self {
            r,
            n_layers,
            chi,
            u: StackPlan::brick_wall(bip.part_a.clone(), r, n_layers),
            v: StackPlan::brick_wall(bip.part_b.clone(), r, n_layers),
            bond_dims: open_bond_dims(r, chi),
            cell: None,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Translation-invariant architecture on one unit cell of an infinite
    /// lattice: per cell one brick-wall template per stack and `R` λ tensors.
    pub fn translational(lattice: &Lattice, bip: &Bipartition, n_layers: usize, chi: usize) -> Result<Self> {
        if !lattice.is_infinite() {
            return Err(Error::Architecture("translational architecture needs an infinite lattice".into()));
        }
        let r = bip.r_tilde;
        let arch = Self {
            r,
            n_layers,
            chi,
            u: StackPlan::brick_wall_cell(bip.part_a.clone(), r, n_layers),
            v: StackPlan::brick_wall_cell(bip.part_b.clone(), r, n_layers),
            bond_dims: vec![chi; r + 1],
            cell: Some(CellInfo {
                cell_sites: lattice.n_sites,
            }),
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn is_translational(&self) -> bool {
        self.cell.is_some()
    }

    pub fn stack(&self, s: Stack) -> &StackPlan {
        match s {
            Stack::U => &self.u,
            Stack::V => &self.v,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.u.n_wires() + self.v.n_wires()
    }

    /// Stack and wire holding `site` (a site of one cell when translational).
    pub fn locate(&self, site: usize) -> Option<(Stack, usize)> {
        for s in [Stack::U, Stack::V] {
            if let Some(w) = self.stack(s).sites.iter().position(|&x| x == site) {
                return Some((s, w));
            }
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Architecture(m));
        if self.chi == 0 {
            return bad("chi must be positive".into());
        }
        if self.r == 0 {
            return bad("R must be positive".into());
        }
        let translational = self.is_translational();
        let mut all_sites: Vec<usize> = self.u.sites.iter().chain(&self.v.sites).copied().collect();
        all_sites.sort_unstable();
        if all_sites.windows(2).any(|w| w[0] == w[1]) {
            return bad("a site appears on more than one wire".into());
        }
        if let Some(cell) = &self.cell {
            if all_sites.len() != cell.cell_sites || all_sites.iter().any(|&s| s >= cell.cell_sites) {
                return bad("cell wires must cover the cell sites exactly once".into());
            }
        }
        if !translational && self.r != self.u.n_wires().min(self.v.n_wires()) {
            return bad(format!(
                "R = {} must equal min(|A|, |B|) = {}",
                self.r,
                self.u.n_wires().min(self.v.n_wires())
            ));
        }
        for (name, st) in [("U", &self.u), ("V", &self.v)] {
            let n = st.n_wires();
            let limit = if translational { 2 * n } else { n };
            if st.schmidt_wires.len() != self.r {
                return bad(format!("{name}: {} Schmidt wires for R = {}", st.schmidt_wires.len(), self.r));
            }
            let mut sw = st.schmidt_wires.clone();
            sw.sort_unstable();
            sw.dedup();
            if sw.len() != self.r || sw.iter().any(|&w| w >= n) {
                return bad(format!("{name}: Schmidt wires must be distinct wires"));
            }
            let mut physical_seen = vec![0usize; n];
            let mut closed = vec![false; limit];
            for (k, g) in st.gates.iter().enumerate() {
                if g.wires.is_empty() {
                    return bad(format!("{name}: gate {k} has no wires"));
                }
                let mut ws = g.wires.clone();
                ws.sort_unstable();
                ws.dedup();
                if ws.len() != g.wires.len() || ws.iter().any(|&w| w >= limit) {
                    return bad(format!("{name}: gate {k} has invalid wires {:?}", g.wires));
                }
                if translational && g.wires.iter().all(|&w| w >= n) {
                    return bad(format!("{name}: gate {k} lies entirely in the next cell"));
                }
                for &w in &g.wires {
                    if closed[w] {
                        return bad(format!("{name}: gate {k} acts after the physical tensor of wire {w}"));
                    }
                }
                if g.physical {
                    if g.wires.len() != 1 || g.wires[0] >= n {
                        return bad(format!("{name}: physical gate {k} must carry exactly one own wire"));
                    }
                    physical_seen[g.wires[0]] += 1;
                    closed[g.wires[0]] = true;
                }
            }
            if let Some(w) = physical_seen.iter().position(|&c| c != 1) {
                return bad(format!("{name}: wire {w} must carry exactly one physical tensor"));
            }
        }
        if self.bond_dims.len() != self.r + 1 || self.bond_dims.iter().any(|&d| d == 0) {
            return bad("bond_dims must hold R + 1 positive entries".into());
        }
        if !translational && (self.bond_dims[0] != 1 || self.bond_dims[self.r] != 1) {
            return bad("finite λ-MPS needs unit boundary bonds".into());
        }
        if translational && self.bond_dims[0] != self.bond_dims[self.r] {
            return bad("translational λ-MPS needs matching cell boundary bonds".into());
        }
        Ok(())
    }
}

/// `min(chi, 2^m, 2^(R-m))` for `m = 0..=R`.
pub fn open_bond_dims(r: usize, chi: usize) -> Vec<usize> {
    (0..=r)
        .map(|m| {
            let cap = |k: usize| if k >= 30 { usize::MAX } else { D_S.pow(k as u32) };
            chi.min(cap(m)).min(cap(r - m))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_zpaf, build_zpaf_fragment, Boundary};

    #[test]
    fn spread_places_ancillas_between_schmidt_wires() {
        assert_eq!(spread(5, 4), vec![0, 1, 3, 4]);
        assert_eq!(spread(4, 4), vec![0, 1, 2, 3]);
        assert_eq!(spread(7, 5), vec![0, 2, 3, 4, 6]);
    }

    #[test]
    fn default_finite_architecture() {
        let (l, b) = build_zpaf(1, Boundary::Open).unwrap();
        let a = Architecture::brick_wall(&l, &b, 2, 4).unwrap();
        assert_eq!(a.r, 4);
        assert_eq!(a.bond_dims, vec![1, 2, 4, 2, 1]);
        assert_eq!(a.u.gates.iter().filter(|g| !g.physical).count(), 3);
        assert_eq!(a.v.gates.iter().filter(|g| !g.physical).count(), 4);
        assert_eq!(a.locate(5), Some((Stack::V, 1)));
        let (l, b) = build_zpaf_fragment(12).unwrap();
        let a = Architecture::brick_wall(&l, &b, 1, 2).unwrap();
        assert_eq!((a.r, a.u.n_wires(), a.v.n_wires()), (5, 7, 5));
    }

    #[test]
    fn translational_architecture() {
        let (l, b) = build_zpaf(1, Boundary::Infinite).unwrap();
        let a = Architecture::translational(&l, &b, 2, 2).unwrap();
        assert_eq!(a.u.gates.iter().filter(|g| !g.physical).count(), 4);
        assert_eq!(a.v.gates.iter().filter(|g| !g.physical).count(), 5);
        assert!(a.u.gates.iter().any(|g| g.wires == vec![3, 4]));
    }

    #[test]
    fn validation_rejects_broken_wiring() {
        let (l, b) = build_zpaf(1, Boundary::Open).unwrap();
        let good = Architecture::brick_wall(&l, &b, 1, 2).unwrap();
        let mut a = good.clone();
        a.u.gates.retain(|g| !(g.physical && g.wires == vec![0]));
        assert!(a.validate().is_err());
        let mut a = good.clone();
        a.u.gates.push(GateSpec { wires: vec![0, 1], layer: 9, physical: false });
        assert!(a.validate().is_err());
        let mut a = good.clone();
        a.v.schmidt_wires[1] = a.v.schmidt_wires[0];
        assert!(a.validate().is_err());
        let mut a = good;
        a.bond_dims[0] = 2;
        assert!(a.validate().is_err());
    }
}
