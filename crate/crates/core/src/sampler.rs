//! Exact sampling of Schmidt strings `r` from `P(r) = λ_r² / ⟨λ|λ⟩`.
//!
//! Right environments of the λ-MPS are computed once, which plays the role
//! of a right-canonical form: the marginal of any prefix is the prefix's left
//! vector contracted with the environment of the remaining sites. Each bit is
//! then drawn from its exact conditional, `O(R χ²)` per sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schmidt::{bits_of, mps, mps_amplitude};
use crate::tensor::{Parameter, Tensor};

/// Largest `R` for exhaustive validation.
pub const VALIDATION_LIMIT: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub bitstrings: Vec<Vec<u8>>,
    pub seed: u64,
    /// Identifier of the state the samples were drawn from, if any.
    pub source: Option<String>,
}

/// Random stream of sample `index`: independent of thread count and of how
/// many samples are drawn.
fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn env_weight(v: &[f64], env: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for a in 0..n {
        if v[a] == 0.0 {
            continue;
        }
        for b in 0..n {
            s += v[a] * env[a * n + b] * v[b];
        }
    }
    s
}

pub fn sample(lambda: &[Parameter], n: usize, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    let eff: Vec<Tensor> = lambda.iter().map(Parameter::effective).collect();
    if eff.first().map(|t| t.shape()[1]) != Some(1) || eff.last().map(|t| t.shape()[2]) != Some(1) {
        return Err(Error::Architecture("sampling needs a finite open λ-MPS".into()));
    }
    let right = mps::right_envs(&eff);
    if !(right[0][0] > 0.0) || !right[0][0].is_finite() {
        return Err(Error::ZeroNorm);
    }
    let views: Vec<mps::SiteView> = eff.iter().map(mps::SiteView::of).collect();
    let bitstrings = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let mut row = vec![1.0];
            let mut bits = Vec::with_capacity(views.len());
            for (m, site) in views.iter().enumerate() {
                let next: Vec<Vec<f64>> = (0..2)
                    .map(|x| {
                        (0..site.right)
                            .map(|b| (0..site.left).map(|a| row[a] * site.at(x, a, b)).sum())
                            .collect()
                    })
                    .collect();
                let w0 = env_weight(&next[0], &right[m + 1]);
                let w1 = env_weight(&next[1], &right[m + 1]);
                let x = usize::from(rng.gen::<f64>() * (w0 + w1) >= w0);
                let norm = next[x].iter().map(|v| v * v).sum::<f64>().sqrt();
                row = next[x].iter().map(|v| v / norm).collect();
                bits.push(x as u8);
            }
            bits
        })
        .collect();
    Ok(SampleBatch {
        bitstrings,
        seed,
        source: None,
    })
}

/// `P(r)` for every string, index `r` read as a big-endian binary number.
pub fn exact_distribution(lambda: &[Parameter]) -> Result<Vec<f64>> {
    let r = lambda.len();
    if r > VALIDATION_LIMIT {
        return Err(Error::TooLarge {
            size: r,
            limit: VALIDATION_LIMIT,
        });
    }
    let amps: Vec<f64> = (0..1usize << r)
        .into_par_iter()
        .map(|x| mps_amplitude(lambda, &bits_of(x, r)))
        .collect::<Result<_>>()?;
    let z: f64 = amps.iter().map(|a| a * a).sum();
    if !(z > 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok(amps.into_iter().map(|a| a * a / z).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub n_samples: usize,
    /// `½ Σ |f_r − P(r)|`.
    pub total_variation: f64,
    /// Pearson statistic over outcomes with `P(r) > 0`.
    pub chi_square: f64,
    /// `(count − nP)² / (nP)` per outcome; infinite for observed outcomes of
    /// zero probability.
    pub per_outcome: Vec<f64>,
    /// Observed outcomes whose exact probability is zero.
    pub impossible: usize,
}

pub fn validate(batch: &SampleBatch, lambda: &[Parameter]) -> Result<ValidationReport> {
    let p = exact_distribution(lambda)?;
    let r = lambda.len();
    let mut counts = vec![0usize; p.len()];
    for s in &batch.bitstrings {
        if s.len() != r {
            return Err(Error::LengthMismatch {
                expected: r,
                actual: s.len(),
            });
        }
        let x = s.iter().fold(0usize, |acc, &b| acc << 1 | b as usize);
        counts[x] += 1;
    }
    let n = batch.bitstrings.len();
    if n == 0 {
        return Err(Error::Config("empty sample batch".into()));
    }
    let nf = n as f64;
    let mut tv = 0.0;
    let mut chi = 0.0;
    let mut impossible = 0;
    let per_outcome = counts
        .iter()
        .zip(&p)
        .map(|(&c, &q)| {
            tv += (c as f64 / nf - q).abs();
            if q > 0.0 {
                let e = nf * q;
                let t = (c as f64 - e).powi(2) / e;
                chi += t;
                t
            } else if c > 0 {
                impossible += c;
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect();
    Ok(ValidationReport {
        n_samples: n,
        total_variation: 0.5 * tv,
        chi_square: chi,
        per_outcome,
        impossible,
    })
}
