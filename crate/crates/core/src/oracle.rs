//! Exact reference computations on dense statevectors.
//!
//! Basis index convention: site 0 is the most significant bit and bit value 0
//! is spin up (`S^z = +1/2`).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::Hamiltonian;
use crate::schmidt::{bits_of, mps, DENSE_LIMIT};
use crate::tensor::{Parameter, Tensor};

/// Largest system assembled as a dense matrix.
pub const DENSE_MATRIX_LIMIT: usize = 12;
/// Largest λ-MPS enumerated exhaustively.
pub const ENUMERATION_LIMIT: usize = 24;
/// Eigenvalues closer than this count as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

fn check_size(h: &Hamiltonian, len: usize) -> Result<usize> {
    if h.infinite {
        return Err(Error::Hamiltonian("exact methods need a finite Hamiltonian".into()));
    }
    let n = h.n_sites;
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { size: n, limit: DENSE_LIMIT });
    }
    if len != 1 << n {
        return Err(Error::LengthMismatch {
            expected: 1 << n,
            actual: len,
        });
    }
    Ok(n)
}

/// Matrix-free `H v`, parallel over output rows.
pub fn apply_hamiltonian(h: &Hamiltonian, v: &[f64]) -> Result<Vec<f64>> {
    let n = check_size(h, v.len())?;
    let bit = |site: usize| n - 1 - site;
    let mut out = vec![0.0; v.len()];
    out.par_chunks_mut(1 << 10.min(n)).enumerate().for_each(|(c, chunk)| {
        let base = c * chunk.len();
        for (off, o) in chunk.iter_mut().enumerate() {
            let x = base + off;
            let mut acc = 0.0;
            for t in &h.two_site_terms {
                let (bi, bj) = (bit(t.i), bit(t.j));
                let row = ((x >> bi) & 1) * 2 + ((x >> bj) & 1);
                let rest = x & !(1 << bi) & !(1 << bj);
                for col in 0..4 {
                    let m = t.matrix[row * 4 + col];
                    if m != 0.0 {
                        acc += m * v[rest | (col >> 1) << bi | (col & 1) << bj];
                    }
                }
            }
            for t in &h.one_site_terms {
                let bi = bit(t.i);
                let row = (x >> bi) & 1;
                let rest = x & !(1 << bi);
                for col in 0..2 {
                    let m = t.matrix[row * 2 + col];
                    if m != 0.0 {
                        acc += m * v[rest | col << bi];
                    }
                }
            }
            *o = acc;
        }
    });
    Ok(out)
}

/// Dense `2^N × 2^N` matrix, for small test systems.
pub fn dense_hamiltonian(h: &Hamiltonian) -> Result<DMatrix<f64>> {
    if h.n_sites > DENSE_MATRIX_LIMIT {
        return Err(Error::TooLarge {
            size: h.n_sites,
            limit: DENSE_MATRIX_LIMIT,
        });
    }
    let dim = 1usize << h.n_sites;
    let mut m = DMatrix::zeros(dim, dim);
    let mut e = vec![0.0; dim];
    for col in 0..dim {
        e[col] = 1.0;
        let hv = apply_hamiltonian(h, &e)?;
        e[col] = 0.0;
        for (row, x) in hv.into_iter().enumerate() {
            m[(row, col)] = x;
        }
    }
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub energy: f64,
    pub energy_per_bond: f64,
    pub vector: Vec<f64>,
    /// `‖Hv − E₀v‖`.
    pub residual: f64,
    /// Second-lowest eigenvalue.
    pub next_energy: f64,
    pub degenerate: bool,
    pub iterations: usize,
}

const ED_TOL: f64 = 1e-11;
const ED_MAX_ITER: usize = 20_000;
const ED_BASIS: usize = 48;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthonormalize(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, v);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
    }
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn combine(basis: &[Vec<f64>], coeffs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = vec![0.0; basis[0].len()];
    for (q, c) in basis.iter().zip(coeffs) {
        out.iter_mut().zip(q).for_each(|(x, y)| *x += c * y);
    }
    out
}

/// Lowest eigenpair of `H` by a block-2 thick-restart Krylov method on the
/// matrix-free operator. The two lowest Ritz pairs are converged so that a
/// degenerate ground state is detected.
pub fn ed_ground_state(h: &Hamiltonian) -> Result<GroundState> {
    let n = check_size(h, 1 << h.n_sites.min(DENSE_LIMIT))?;
    let dim = 1usize << n;
    let edges = h.edge_count.max(1) as f64;
    if dim <= 64 {
        let m = dense_hamiltonian(h)?;
        let eig = m.symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let e0 = eig.eigenvalues[order[0]];
        let e1 = if dim > 1 { eig.eigenvalues[order[1]] } else { f64::INFINITY };
        let vector: Vec<f64> = eig.eigenvectors.column(order[0]).iter().copied().collect();
        let hv = apply_hamiltonian(h, &vector)?;
        let residual = hv.iter().zip(&vector).map(|(a, b)| (a - e0 * b).powi(2)).sum::<f64>().sqrt();
        return Ok(GroundState {
            energy: e0,
            energy_per_bond: e0 / edges,
            vector,
            residual,
            next_energy: e1,
            degenerate: e1 - e0 < DEGENERACY_TOL,
            iterations: 0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut images: Vec<Vec<f64>> = Vec::new();
    let mut pending: Vec<Vec<f64>> = (0..2).map(|_| (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect()).collect();
    let mut iterations = 0;
    loop {
        for mut v in pending.drain(..) {
            if orthonormalize(&mut v, &basis) < 1e-12 {
                continue;
            }
            images.push(apply_hamiltonian(h, &v)?);
            basis.push(v);
            iterations += 1;
        }
        let k = basis.len();
        let t = DMatrix::from_fn(k, k, |i, j| 0.5 * (dot(&basis[i], &images[j]) + dot(&basis[j], &images[i])));
        let eig = t.symmetric_eigen();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let ritz = |idx: usize| -> (f64, Vec<f64>, Vec<f64>) {
            let col = eig.eigenvectors.column(order[idx]);
            let x = combine(&basis, col.iter().copied());
            let hx = combine(&images, col.iter().copied());
            let theta = eig.eigenvalues[order[idx]];
            let r: Vec<f64> = hx.iter().zip(&x).map(|(a, b)| a - theta * b).collect();
            (theta, x, r)
        };
        let wanted = k.min(2);
        let pairs: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..wanted).map(ritz).collect();
        let res: Vec<f64> = pairs.iter().map(|p| dot(&p.2, &p.2).sqrt()).collect();
        let done = res[0] < ED_TOL && (wanted < 2 || res[1] < 1e-7 || k == dim);
        if done || k == dim {
            let (e0, vector, _) = pairs[0].clone();
            let e1 = if wanted > 1 { pairs[1].0 } else { f64::INFINITY };
            let hv = apply_hamiltonian(h, &vector)?;
            let residual = hv.iter().zip(&vector).map(|(a, b)| (a - e0 * b).powi(2)).sum::<f64>().sqrt();
            return Ok(GroundState {
                energy: e0,
                energy_per_bond: e0 / edges,
                vector,
                residual,
                next_energy: e1,
                degenerate: e1 - e0 < DEGENERACY_TOL,
                iterations,
            });
        }
        if iterations > ED_MAX_ITER {
            return Err(Error::EigenNoConvergence(res[0]));
        }
        if k + 2 > ED_BASIS {
            let keep = 6.min(k);
            basis = (0..keep)
                .map(|i| combine(&basis, eig.eigenvectors.column(order[i]).iter().copied()))
                .collect();
            // re-orthonormalize the restart block against rounding drift
            for i in 0..basis.len() {
                let (done, rest) = basis.split_at_mut(i);
                orthonormalize(&mut rest[0], done);
            }
            images = basis.iter().map(|v| apply_hamiltonian(h, v)).collect::<Result<_>>()?;
        }
        for (i, p) in pairs.into_iter().enumerate() {
            if res[i] > 1e-14 {
                pending.push(p.2);
            }
        }
    }
}

/// Normalized Schmidt coefficients in descending order, optionally labelled
/// by λ-MPS bitstrings.
#[derive(Clone, Debug, PartialEq)]
pub struct SchmidtSpectrum {
    pub coefficients: Vec<f64>,
    pub labels: Option<Vec<Vec<u8>>>,
}

impl SchmidtSpectrum {
    pub fn entropy(&self) -> f64 {
        entanglement_entropy(&self.coefficients)
    }
}

/// Singular values of the `2^|A| × 2^|B|` matricization of a unit vector.
pub fn schmidt_decompose(vector: &[f64], part_a: &[usize]) -> Result<SchmidtSpectrum> {
    let dim = vector.len();
    if !dim.is_power_of_two() {
        return Err(Error::DataLength {
            shape: vec![dim],
            expected: dim.next_power_of_two(),
            actual: dim,
        });
    }
    let n = dim.trailing_zeros() as usize;
    let norm = dot(vector, vector);
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized(norm));
    }
    let mut in_a = vec![false; n];
    for &s in part_a {
        if s >= n || in_a[s] {
            return Err(Error::Lattice(format!("invalid subsystem site {s}")));
        }
        in_a[s] = true;
    }
    let part_b: Vec<usize> = (0..n).filter(|&s| !in_a[s]).collect();
    let index = |sites: &[usize], x: usize| -> usize {
        sites
            .iter()
            .enumerate()
            .filter(|(k, _)| x >> (sites.len() - 1 - k) & 1 == 1)
            .map(|(_, &s)| 1usize << (n - 1 - s))
            .sum()
    };
    let rows: Vec<usize> = (0..1usize << part_a.len()).map(|x| index(part_a, x)).collect();
    let cols: Vec<usize> = (0..1usize << part_b.len()).map(|x| index(&part_b, x)).collect();
    let m = DMatrix::from_fn(rows.len(), cols.len(), |i, j| vector[rows[i] | cols[j]]);
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let z = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(SchmidtSpectrum {
        coefficients: s.into_iter().map(|x| x / z).collect(),
        labels: None,
    })
}

/// Reduced density matrix of part A, `ρ_A = M Mᵀ`.
pub fn reduced_density_matrix(vector: &[f64], part_a: &[usize]) -> Result<DMatrix<f64>> {
    let n = vector.len().trailing_zeros() as usize;
    let part_b: Vec<usize> = (0..n).filter(|s| !part_a.contains(s)).collect();
    let pick = |sites: &[usize], x: usize| -> usize {
        sites
            .iter()
            .enumerate()
            .filter(|(k, _)| x >> (sites.len() - 1 - k) & 1 == 1)
            .map(|(_, &s)| 1usize << (n - 1 - s))
            .sum()
    };
    let (ra, rb) = (1usize << part_a.len(), 1usize << part_b.len());
    let m = DMatrix::from_fn(ra, rb, |i, j| vector[pick(part_a, i) | pick(&part_b, j)]);
    Ok(&m * m.transpose())
}

/// `S = −Σ γ² log₂ γ²` in bits; coefficients below 1e-15 contribute nothing.
pub fn entanglement_entropy(coefficients: &[f64]) -> f64 {
    coefficients
        .iter()
        .filter(|&&g| g.abs() >= 1e-15)
        .map(|&g| {
            let p = g * g;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// The `k` largest normalized amplitudes `λ_r / √⟨λ|λ⟩` with their
/// bitstrings, by exhaustive enumeration. Ties are ordered lexicographically.
pub fn top_k_schmidt(lambda: &[Parameter], k: usize) -> Result<Vec<(Vec<u8>, f64)>> {
    let r = lambda.len();
    if r > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            size: r,
            limit: ENUMERATION_LIMIT,
        });
    }
    let total = 1usize << r;
    let k = k.min(total);
    let eff: Vec<Tensor> = lambda.iter().map(Parameter::effective).collect();
    let z = mps::norm_sq(&eff);
    if !(z > 0.0) {
        return Err(Error::ZeroNorm);
    }
    let block = 1usize << 12.min(r);
    let best: Vec<(usize, f64)> = (0..total / block)
        .into_par_iter()
        .map(|b| -> Result<Vec<(usize, f64)>> {
            let mut local: Vec<(usize, f64)> = (b * block..(b + 1) * block)
                .map(|x| Ok((x, crate::schmidt::mps_amplitude(lambda, &bits_of(x, r))?)))
                .collect::<Result<_>>()?;
            local.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            local.truncate(k);
            Ok(local)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut best = best;
    best.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    best.truncate(k);
    let norm = z.sqrt();
    Ok(best.into_iter().map(|(x, a)| (bits_of(x, r), a / norm)).collect())
}

/// Schmidt spectrum of `|λ⟩` itself across bond `cut` (between sites
/// `cut − 1` and `cut`), from QR sweeps into canonical form.
pub fn mps_spectrum(lambda: &[Parameter], cut: usize) -> Result<Vec<f64>> {
    let r = lambda.len();
    if cut == 0 || cut >= r {
        return Err(Error::Architecture(format!("cut {cut} must lie strictly inside 0..{r}")));
    }
    let eff: Vec<Tensor> = lambda.iter().map(Parameter::effective).collect();
    let dims = |t: &Tensor| (t.shape()[1], t.shape()[2]);
    // left block: M (k × χ) with Gram MᵀM of the left states
    let mut left = DMatrix::from_element(1, 1, 1.0);
    for t in &eff[..cut] {
        let (l, rt) = dims(t);
        let k = left.nrows();
        let mut b = DMatrix::zeros(k * 2, rt);
        for a in 0..k {
            for x in 0..2 {
                for c in 0..l {
                    let m = left[(a, c)];
                    if m == 0.0 {
                        continue;
                    }
                    for j in 0..rt {
                        b[(a * 2 + x, j)] += m * t.data()[(x * l + c) * rt + j];
                    }
                }
            }
        }
        left = b.qr().r();
    }
    // right block: N (χ × k) with Gram NNᵀ of the right states
    let mut right = DMatrix::from_element(1, 1, 1.0);
    for t in eff[cut..].iter().rev() {
        let (l, rt) = dims(t);
        let k = right.ncols();
        let mut b = DMatrix::zeros(l, 2 * k);
        for c in 0..l {
            for x in 0..2 {
                for j in 0..rt {
                    let v = t.data()[(x * l + c) * rt + j];
                    if v == 0.0 {
                        continue;
                    }
                    for a in 0..k {
                        b[(c, x * k + a)] += v * right[(j, a)];
                    }
                }
            }
        }
        right = b.transpose().qr().r().transpose();
    }
    let center = &left * &right;
    let mut s: Vec<f64> = center.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let z = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(z > 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok(s.into_iter().map(|x| x / z).collect())
}

/// Entanglement entropy of `|λ⟩` across bond `cut`, in bits.
pub fn mps_entanglement(lambda: &[Parameter], cut: usize) -> Result<f64> {
    Ok(entanglement_entropy(&mps_spectrum(lambda, cut)?))
}
