//! Contractions of the λ-MPS with itself.
//!
//! Matrices are `χ × χ` row-major `Vec<f64>`; a site tensor is
//! `[r][left][right]` row-major (the effective, nonnegative entries).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SiteView<'a> {
    pub data: &'a [f64],
    pub left: usize,
    pub right: usize,
}

impl<'a> SiteView<'a> {
    pub fn of(t: &'a Tensor) -> Self {
        let s = t.shape();
        Self {
            data: t.data(),
            left: s[1],
            right: s[2],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, a: usize, b: usize) -> f64 {
        self.data[(r * self.left + a) * self.right + b]
    }
}

/// `E' = Σ_r A_rᵀ E A_r`.
pub fn push_left(env: &[f64], site: &SiteView) -> Vec<f64> {
    let (l, rt) = (site.left, site.right);
    let mut out = vec![0.0; rt * rt];
    let mut tmp = vec![0.0; l * rt];
    for r in 0..2 {
        // tmp = E A_r  (l × rt)
        tmp.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..l {
            for c in 0..l {
                let e = env[a * l + c];
                if e == 0.0 {
                    continue;
                }
                for b in 0..rt {
                    tmp[a * rt + b] += e * site.at(r, c, b);
                }
            }
        }
        for a in 0..l {
            for b in 0..rt {
                let x = site.at(r, a, b);
                if x == 0.0 {
                    continue;
                }
                for d in 0..rt {
                    out[b * rt + d] += x * tmp[a * rt + d];
                }
            }
        }
    }
    out
}

/// `E' = Σ_r A_r E A_rᵀ`.
pub fn push_right(env: &[f64], site: &SiteView) -> Vec<f64> {
    let (l, rt) = (site.left, site.right);
    let mut out = vec![0.0; l * l];
    let mut tmp = vec![0.0; l * rt];
    for r in 0..2 {
        tmp.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..l {
            for b in 0..rt {
                let x = site.at(r, a, b);
                if x == 0.0 {
                    continue;
                }
                for d in 0..rt {
                    tmp[a * rt + d] += x * env[b * rt + d];
                }
            }
        }
        for a in 0..l {
            for c in 0..l {
                let mut s = 0.0;
                for d in 0..rt {
                    s += tmp[a * rt + d] * site.at(r, c, d);
                }
                out[a * l + c] += s;
            }
        }
    }
    out
}

/// Left environments `L_0 = [1], L_{m+1} = push_left(L_m, A_m)` for an open
/// chain; `L_R` is `⟨λ|λ⟩`.
pub fn left_envs(sites: &[Tensor]) -> Vec<Vec<f64>> {
    let mut envs = vec![vec![1.0]];
    for t in sites {
        let next = push_left(envs.last().unwrap(), &SiteView::of(t));
        envs.push(next);
    }
    envs
}

/// Right environments, `R_R = [1]`; entry `m` sits on bond `m`.
pub fn right_envs(sites: &[Tensor]) -> Vec<Vec<f64>> {
    let mut envs = vec![vec![1.0]; sites.len() + 1];
    for m in (0..sites.len()).rev() {
        envs[m] = push_right(&envs[m + 1], &SiteView::of(&sites[m]));
    }
    envs
}

pub fn norm_sq(sites: &[Tensor]) -> f64 {
    left_envs(sites).last().unwrap()[0]
}

/// Dominant eigenpair of a positive linear map on `n × n` matrices by power
/// iteration with per-step normalization.
#[derive(Clone, Debug)]
pub struct PowerResult {
    pub vector: Vec<f64>,
    pub eigenvalue: f64,
    pub residual: f64,
    pub iterations: usize,
}

pub fn power_iteration(
    start: Vec<f64>,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<PowerResult> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut v = start;
    let n0 = norm(&v);
    if n0 == 0.0 || !n0.is_finite() {
        return Err(Error::ZeroNorm);
    }
    v.iter_mut().for_each(|x| *x /= n0);
    let mut prev_res = f64::INFINITY;
    let mut ratio = 1.0;
    for it in 1..=max_iter {
        let w = apply(&v);
        let mu: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let res = norm(&w.iter().zip(&v).map(|(a, b)| a - mu * b).collect::<Vec<_>>());
        let wn = norm(&w);
        if wn == 0.0 || !wn.is_finite() {
            return Err(Error::ZeroNorm);
        }
        if res < tol * mu.abs().max(1e-300) {
            return Ok(PowerResult {
                vector: v,
                eigenvalue: mu,
                residual: res / mu.abs(),
                iterations: it,
            });
        }
        if prev_res.is_finite() && prev_res > 0.0 {
            ratio = res / prev_res;
        }
        prev_res = res;
        v = w.into_iter().map(|x| x / wn).collect();
    }
    Err(Error::NoConvergence {
        residual: prev_res,
        gap: 1.0 - ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_finds_dominant_pair() {
        // symmetric 2x2 [[2,1],[1,2]] has dominant eigenvalue 3
        let r = power_iteration(vec![1.0, 0.0], |v| vec![2.0 * v[0] + v[1], v[0] + 2.0 * v[1]], 1e-12, 1000).unwrap();
        assert!((r.eigenvalue - 3.0).abs() < 1e-10);
        assert!((r.vector[0] - r.vector[1]).abs() < 1e-10);
    }

    #[test]
    fn degenerate_map_reports_no_convergence() {
        // swap: eigenvalues ±1, never converges from a non-eigenvector
        let e = power_iteration(vec![1.0, 0.0], |v| vec![v[1], v[0]], 1e-12, 50);
        assert!(matches!(e, Err(Error::NoConvergence { .. })));
    }
}
