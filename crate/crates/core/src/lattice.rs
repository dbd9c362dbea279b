//! Lattices, bipartitions and spin-1/2 Hamiltonians.
//!
//! The default geometry is a zigzag chain of pentagons. One unit cell holds
//! nine sites: an up pentagon `s0..s4` and a down pentagon `s4..s8` sharing
//! the vertex `s4`; consecutive cells are joined by the edge `(s8, s0')`.
//! The cut runs along the chain: `s0..s3` of every cell form part A and
//! `s4..s8` part B, so the boundary grows linearly with the number of cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ZPAF_CELL: usize = 9;
const ZPAF_INTRA: [(usize, usize); 10] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 4),
    (0, 4),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 8),
    (4, 8),
];
const ZPAF_LINK: (usize, usize) = (8, 0);
const ZPAF_PART_A: [usize; 4] = [0, 1, 2, 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
    Infinite,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    /// Sites of the whole system, or of one unit cell when infinite.
    pub n_sites: usize,
    /// Canonical `(min, max)` pairs, sorted.
    pub edges: Vec<(usize, usize)>,
    pub boundary: Boundary,
    pub cell_size: usize,
    /// `(site in cell k, site in cell k + 1)`; infinite lattices only.
    pub inter_cell_edges: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bipartition {
    pub part_a: Vec<usize>,
    pub part_b: Vec<usize>,
    /// Edges crossing the cut (per cell when infinite).
    pub boundary_length: usize,
    /// `min(|A|, |B|)` (per cell when infinite).
    pub r_tilde: usize,
}

impl Lattice {
    pub fn new(
        n_sites: usize,
        edges: Vec<(usize, usize)>,
        boundary: Boundary,
        cell_size: usize,
        inter_cell_edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::Lattice("no sites".into()));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for (i, j) in edges {
            if i == j {
                return Err(Error::Lattice(format!("self-loop on site {i}")));
            }
            if i >= n_sites || j >= n_sites {
                return Err(Error::Lattice(format!("edge ({i}, {j}) outside {n_sites} sites")));
            }
            canon.push((i.min(j), i.max(j)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Lattice(format!("duplicate edge {:?}", w[0])));
        }
        let mut inter = inter_cell_edges;
        if boundary != Boundary::Infinite && !inter.is_empty() {
            return Err(Error::Lattice("inter-cell edges on a finite lattice".into()));
        }
        for &(i, j) in &inter {
            if i >= n_sites || j >= n_sites {
                return Err(Error::Lattice(format!("inter-cell edge ({i}, {j}) outside the cell")));
            }
        }
        inter.sort_unstable();
        if let Some(w) = inter.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Lattice(format!("duplicate inter-cell edge {:?}", w[0])));
        }
        Ok(Self {
            n_sites,
            edges: canon,
            boundary,
            cell_size,
            inter_cell_edges: inter,
        })
    }

    pub fn is_infinite(&self) -> bool {
        self.boundary == Boundary::Infinite
    }

    /// Edges per cell for infinite lattices, all edges otherwise.
    pub fn edge_count(&self) -> usize {
        self.edges.len() + self.inter_cell_edges.len()
    }

    /// Two-site bonds with sites in the extended numbering: for infinite
    /// lattices the partner in the next cell is `j + n_sites`.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut out = self.edges.clone();
        out.extend(self.inter_cell_edges.iter().map(|&(i, j)| (i, j + self.n_sites)));
        out
    }

    /// Induced sublattice on the first `n` sites (open boundary).
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n_sites || self.is_infinite() {
            return Err(Error::Lattice(format!("cannot truncate {} sites to {n}", self.n_sites)));
        }
        let edges = self.edges.iter().copied().filter(|&(_, j)| j < n).collect();
        Lattice::new(n, edges, Boundary::Open, n.min(self.cell_size), vec![])
    }
}

impl Bipartition {
    pub fn new(lattice: &Lattice, part_a: Vec<usize>) -> Result<Self> {
        let mut a = part_a;
        a.sort_unstable();
        a.dedup();
        if let Some(&bad) = a.iter().find(|&&s| s >= lattice.n_sites) {
            return Err(Error::Lattice(format!("part A site {bad} outside the lattice")));
        }
        let b: Vec<usize> = (0..lattice.n_sites).filter(|s| a.binary_search(s).is_err()).collect();
        if a.is_empty() || b.is_empty() {
            return Err(Error::Lattice("both parts of the bipartition must be nonempty".into()));
        }
        let in_a = |s: usize| a.binary_search(&s).is_ok();
        let crossing = lattice
            .edges
            .iter()
            .chain(&lattice.inter_cell_edges)
            .filter(|&&(i, j)| in_a(i) != in_a(j))
            .count();
        Ok(Self {
            r_tilde: a.len().min(b.len()),
            part_a: a,
            part_b: b,
            boundary_length: crossing,
        })
    }

    pub fn contains_a(&self, site: usize) -> bool {
        self.part_a.binary_search(&site).is_ok()
    }
}

/// Zigzag-pentagon lattice of `cells` unit cells with the along-chain cut.
pub fn build_zpaf(cells: usize, boundary: Boundary) -> Result<(Lattice, Bipartition)> {
    if cells == 0 {
        return Err(Error::Lattice("cells must be at least 1".into()));
    }
    let n = cells * ZPAF_CELL;
    let mut edges = Vec::new();
    for c in 0..cells {
        let o = c * ZPAF_CELL;
        edges.extend(ZPAF_INTRA.iter().map(|&(i, j)| (o + i, o + j)));
    }
    let link = |c: usize| (c * ZPAF_CELL + ZPAF_LINK.0, ((c + 1) % cells) * ZPAF_CELL + ZPAF_LINK.1);
    let mut inter = Vec::new();
    match boundary {
        Boundary::Open => edges.extend((0..cells - 1).map(link)),
        Boundary::Periodic => edges.extend((0..cells).map(link)),
        Boundary::Infinite => {
            edges.extend((0..cells - 1).map(link));
            inter.push((n - ZPAF_CELL + ZPAF_LINK.0, ZPAF_LINK.1));
        }
    }
    let lattice = Lattice::new(n, edges, boundary, n, inter)?;
    let lattice = Lattice {
        cell_size: if boundary == Boundary::Infinite { n } else { ZPAF_CELL },
        ..lattice
    };
    let part_a = (0..cells)
        .flat_map(|c| ZPAF_PART_A.iter().map(move |&s| c * ZPAF_CELL + s))
        .collect();
    let bip = Bipartition::new(&lattice, part_a)?;
    Ok((lattice, bip))
}

/// First `n_sites` sites of an open zigzag-pentagon chain, with the
/// along-chain cut restricted to them.
pub fn build_zpaf_fragment(n_sites: usize) -> Result<(Lattice, Bipartition)> {
    if n_sites < 2 {
        return Err(Error::Lattice("a fragment needs at least 2 sites".into()));
    }
    let cells = n_sites.div_ceil(ZPAF_CELL);
    let (full, bip) = build_zpaf(cells, Boundary::Open)?;
    let lattice = full.truncated(n_sites)?;
    let part_a = bip.part_a.into_iter().filter(|&s| s < n_sites).collect();
    let bip = Bipartition::new(&lattice, part_a)?;
    Ok((lattice, bip))
}

/// Parses the edge-list format:
///
/// ```text
/// # comment
/// sites 9
/// edge 0 1
/// partA 0
/// ```
pub fn load_lattice(document: &str) -> Result<(Lattice, Bipartition)> {
    let mut n_sites: Option<(usize, usize)> = None;
    let mut edges = Vec::new();
    let mut part_a = Vec::new();
    let mut last_line = 0;
    for (k, raw) in document.lines().enumerate() {
        let line_no = k + 1;
        last_line = line_no;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        let key = words.next().unwrap();
        let nums = words
            .map(|w| {
                w.parse::<usize>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("`{w}` is not a nonnegative decimal integer"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let arity = |want: usize| -> Result<()> {
            if nums.len() != want {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("`{key}` takes {want} integer(s), got {}", nums.len()),
                });
            }
            Ok(())
        };
        match key {
            "sites" => {
                arity(1)?;
                if n_sites.is_some() {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "repeated `sites` line".into(),
                    });
                }
                n_sites = Some((nums[0], line_no));
            }
            "edge" => {
                arity(2)?;
                edges.push((nums[0], nums[1], line_no));
            }
            "partA" => {
                arity(1)?;
                part_a.push((nums[0], line_no));
            }
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown keyword `{other}`"),
                })
            }
        }
    }
    let (n, _) = n_sites.ok_or(Error::Parse {
        line: last_line.max(1),
        msg: "missing `sites` line".into(),
    })?;
    for &(i, j, line) in &edges {
        if i >= n || j >= n {
            return Err(Error::Parse {
                line,
                msg: format!("edge ({i}, {j}) references a site outside 0..{n}"),
            });
        }
    }
    for &(s, line) in &part_a {
        if s >= n {
            return Err(Error::Parse {
                line,
                msg: format!("partA site {s} outside 0..{n}"),
            });
        }
    }
    let lattice = Lattice::new(n, edges.iter().map(|&(i, j, _)| (i, j)).collect(), Boundary::Open, n, vec![])?;
    let bip = Bipartition::new(&lattice, part_a.iter().map(|&(s, _)| s).collect())?;
    Ok((lattice, bip))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Heisenberg,
    Xy,
    Tim,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "heisenberg" => Ok(Self::Heisenberg),
            "xy" => Ok(Self::Xy),
            "tim" => Ok(Self::Tim),
            other => Err(Error::Hamiltonian(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub h_x: Option<f64>,
}

/// Two-site coupling on `(i, j)`; `matrix` is row-major over `(s_i, s_j)`
/// with `s = 0` the `S^z = +1/2` state.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoSiteTerm {
    pub i: usize,
    pub j: usize,
    pub matrix: [f64; 16],
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneSiteTerm {
    pub i: usize,
    pub matrix: [f64; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hamiltonian {
    pub two_site_terms: Vec<TwoSiteTerm>,
    pub one_site_terms: Vec<OneSiteTerm>,
    pub kind: ModelKind,
    pub params: ModelParams,
    /// Sites addressed by the terms (two cells' worth when infinite).
    pub n_sites: usize,
    /// Bonds counted for the energy density.
    pub edge_count: usize,
    pub infinite: bool,
}

pub const SZ: [f64; 4] = [0.5, 0.0, 0.0, -0.5];
pub const SX: [f64; 4] = [0.0, 0.5, 0.5, 0.0];

pub fn kron2(a: &[f64; 4], b: &[f64; 4]) -> [f64; 16] {
    let mut out = [0.0; 16];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[(i * 2 + k) * 4 + j * 2 + l] = a[i * 2 + j] * b[k * 2 + l];
                }
            }
        }
    }
    out
}

/// `S^y ⊗ S^y`, which is real.
fn sysy() -> [f64; 16] {
    let mut m = [0.0; 16];
    m[3] = -0.25;
    m[6] = 0.25;
    m[9] = 0.25;
    m[12] = -0.25;
    m
}

pub fn bond_matrix(kind: ModelKind) -> [f64; 16] {
    let zz = kron2(&SZ, &SZ);
    let xx = kron2(&SX, &SX);
    let yy = sysy();
    let mut m = [0.0; 16];
    for k in 0..16 {
        m[k] = match kind {
            ModelKind::Heisenberg => xx[k] + yy[k] + zz[k],
            ModelKind::Xy => xx[k] + yy[k],
            ModelKind::Tim => zz[k],
        };
    }
    m
}

pub fn build_hamiltonian(lattice: &Lattice, kind: ModelKind, params: ModelParams) -> Result<Hamiltonian> {
    let h_x = match (kind, params.h_x) {
        (ModelKind::Tim, None) => return Err(Error::Hamiltonian("tim requires h_x".into())),
        (ModelKind::Tim, Some(h)) if !(h >= 0.0 && h.is_finite()) => {
            return Err(Error::Hamiltonian(format!("h_x must be finite and >= 0, got {h}")))
        }
        (_, h) => h,
    };
    let m = bond_matrix(kind);
    let two_site_terms = lattice
        .bonds()
        .into_iter()
        .map(|(i, j)| TwoSiteTerm { i, j, matrix: m })
        .collect();
    let mut one_site_terms = Vec::new();
    if kind == ModelKind::Tim {
        let h = h_x.unwrap_or(0.0);
        for i in 0..lattice.n_sites {
            one_site_terms.push(OneSiteTerm {
                i,
                matrix: SX.map(|x| -h * x),
            });
        }
    }
    let infinite = lattice.is_infinite();
    Ok(Hamiltonian {
        two_site_terms,
        one_site_terms,
        kind,
        params,
        n_sites: if infinite { 2 * lattice.n_sites } else { lattice.n_sites },
        edge_count: lattice.edge_count(),
        infinite,
    })
}

impl Hamiltonian {
    /// Hamiltonian without any terms, used as a zero operator.
    pub fn zero(n_sites: usize) -> Self {
        Self {
            two_site_terms: vec![],
            one_site_terms: vec![],
            kind: ModelKind::Heisenberg,
            params: ModelParams::default(),
            n_sites,
            edge_count: 1,
            infinite: false,
        }
    }

    pub fn term_count(&self) -> usize {
        self.two_site_terms.len() + self.one_site_terms.len()
    }

    pub fn is_symmetric(&self) -> bool {
        let sym16 = |m: &[f64; 16]| (0..4).all(|r| (0..4).all(|c| m[r * 4 + c] == m[c * 4 + r]));
        let sym4 = |m: &[f64; 4]| m[1] == m[2];
        self.two_site_terms.iter().all(|t| sym16(&t.matrix)) && self.one_site_terms.iter().all(|t| sym4(&t.matrix))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn has_five_cycle(edges: &[(usize, usize)], sites: &[usize]) -> bool {
        let adj = |a: usize, b: usize| edges.contains(&(a.min(b), a.max(b)));
        for &a in sites {
            for &b in sites {
                for &c in sites {
                    for &d in sites {
                        for &e in sites {
                            let v = [a, b, c, d, e];
                            let distinct = (0..5).all(|i| (0..i).all(|j| v[i] != v[j]));
                            if distinct && (0..5).all(|i| adj(v[i], v[(i + 1) % 5])) {
                                return true;
                            }
                        }
                    }
                }
            }
        }
        false
    }

    #[test]
    fn zpaf_counts() {
        let (l, b) = build_zpaf(1, Boundary::Open).unwrap();
        assert_eq!((l.n_sites, l.edges.len(), b.r_tilde), (9, 10, 4));
        let (l, _) = build_zpaf(2, Boundary::Open).unwrap();
        assert_eq!((l.n_sites, l.edges.len()), (18, 21));
        let (l, _) = build_zpaf(1, Boundary::Infinite).unwrap();
        assert_eq!((l.cell_size, l.edges.len(), l.inter_cell_edges.len()), (9, 10, 1));
        let (l, _) = build_zpaf(3, Boundary::Periodic).unwrap();
        assert_eq!(l.edges.len(), 33);
        assert!(build_zpaf(0, Boundary::Open).is_err());
    }

    #[test]
    fn zpaf_is_frustrated_in_every_cell() {
        let (l, _) = build_zpaf(3, Boundary::Open).unwrap();
        for c in 0..3 {
            let sites: Vec<usize> = (c * 9..c * 9 + 9).collect();
            assert!(has_five_cycle(&l.edges, &sites));
        }
    }

    #[test]
    fn boundary_length_linear_in_cells() {
        let lens: Vec<usize> = (1..6)
            .map(|c| build_zpaf(c, Boundary::Periodic).unwrap().1.boundary_length)
            .collect();
        for w in lens.windows(2) {
            assert_eq!(w[1] - w[0], lens[0]);
        }
        let (_, inf) = build_zpaf(1, Boundary::Infinite).unwrap();
        assert_eq!(inf.boundary_length, lens[0]);
    }

    #[test]
    fn fragments() {
        let (l, b) = build_zpaf_fragment(10).unwrap();
        assert_eq!(l.edges.len(), 11);
        assert_eq!(b.part_a, vec![0, 1, 2, 3, 9]);
        assert_eq!(b.r_tilde, 5);
        let (l, b) = build_zpaf_fragment(8).unwrap();
        assert_eq!((l.edges.len(), b.r_tilde), (8, 4));
    }

    #[test]
    fn load_small_documents() {
        let (l, b) = load_lattice("sites 2\nedge 0 1\npartA 0\n").unwrap();
        assert_eq!((l.n_sites, b.boundary_length, b.r_tilde), (2, 1, 1));
        let (_, b) = load_lattice("# triangle\nsites 3\nedge 0 1\nedge 1 2\nedge 2 0\npartA 0\n").unwrap();
        assert_eq!((b.boundary_length, b.r_tilde), (2, 1));
    }

    #[test]
    fn load_reproduces_generator() {
        let (gl, gb) = build_zpaf(1, Boundary::Open).unwrap();
        let mut doc = String::from("sites 9\n");
        for &(i, j) in ZPAF_INTRA.iter().rev() {
            doc.push_str(&format!("edge {j} {i}  # reversed order\n"));
        }
        for s in 0..4 {
            doc.push_str(&format!("partA {s}\n"));
        }
        let (l, b) = load_lattice(&doc).unwrap();
        assert_eq!(l, gl);
        assert_eq!(b, gb);
    }

    #[test]
    fn load_errors_carry_line_numbers() {
        match load_lattice("sites 3\nedge 0 x\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match load_lattice("sites 3\n\nedge 0 5\npartA 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(load_lattice("sites 3\nedge 0 1\nedge 1 0\npartA 0"), Err(Error::Lattice(_))));
        assert!(matches!(load_lattice("sites 3\nedge 0 1\n"), Err(Error::Lattice(_))));
        assert!(matches!(load_lattice("edge 0 1\n"), Err(Error::Parse { .. })));
        assert!(matches!(load_lattice("sites 2\nbond 0 1\n"), Err(Error::Parse { line: 2, .. })));
    }

    fn eig4(m: &[f64; 16]) -> Vec<f64> {
        let mut e: Vec<f64> = DMatrix::from_row_slice(4, 4, m).symmetric_eigen().eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }

    #[test]
    fn bond_spectra() {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-14);
        assert!(close(&eig4(&bond_matrix(ModelKind::Heisenberg)), &[-0.75, 0.25, 0.25, 0.25]));
        assert!(close(&eig4(&bond_matrix(ModelKind::Xy)), &[-0.5, 0.0, 0.0, 0.5]));
        assert!(close(&eig4(&bond_matrix(ModelKind::Tim)), &[-0.25, -0.25, 0.25, 0.25]));
    }

    #[test]
    fn hamiltonian_construction() {
        let (l, _) = build_zpaf(1, Boundary::Open).unwrap();
        let h = build_hamiltonian(&l, ModelKind::Tim, ModelParams { h_x: Some(0.3) }).unwrap();
        assert_eq!((h.two_site_terms.len(), h.one_site_terms.len()), (10, 9));
        assert!(h.is_symmetric());
        assert!(build_hamiltonian(&l, ModelKind::Tim, ModelParams::default()).is_err());
        assert!(build_hamiltonian(&l, ModelKind::Tim, ModelParams { h_x: Some(-1.0) }).is_err());
        assert!("ising".parse::<ModelKind>().is_err());
        let (li, _) = build_zpaf(1, Boundary::Infinite).unwrap();
        let hi = build_hamiltonian(&li, ModelKind::Heisenberg, ModelParams::default()).unwrap();
        assert_eq!(hi.edge_count, 11);
        assert!(hi.two_site_terms.iter().any(|t| t.i == 8 && t.j == 9));
    }
}
