//! Greedy pairwise contraction ordering.
//!
//! At every step the pair of live tensors that share a label and minimize
//! `size(result) − size(a) − size(b)` is contracted. A label shared by the
//! pair is summed only when no other live tensor (and not the output) carries
//! it; otherwise it stays as a batch axis, which is how hyperedges are handled.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Default bound on the bytes of any single intermediate.
pub const DEFAULT_MEMORY_CAP: usize = 2 << 30;

#[derive(Clone, Debug, PartialEq)]
pub struct PlanStep {
    /// Slot indices of the operands. The result occupies the next free slot
    /// (`inputs + step index`).
    pub a: usize,
    pub b: usize,
    pub out: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionPlan {
    pub steps: Vec<PlanStep>,
    /// Slot holding the final tensor.
    pub result: usize,
    /// Largest intermediate, in elements.
    pub peak_elements: usize,
}

struct Live {
    labels: Vec<String>,
    size: usize,
}

pub fn plan_greedy(
    inputs: &[(Vec<String>, Vec<usize>)],
    output: &[String],
    memory_cap: usize,
) -> Result<ContractionPlan> {
    let mut dims: HashMap<&str, usize> = HashMap::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for (labels, shape) in inputs {
        for (l, &d) in labels.iter().zip(shape) {
            if let Some(&prev) = dims.get(l.as_str()) {
                if prev != d {
                    return Err(Error::DimensionMismatch {
                        a: l.clone(),
                        b: l.clone(),
                        da: prev,
                        db: d,
                    });
                }
            }
            dims.insert(l, d);
            *counts.entry(l.clone()).or_default() += 1;
        }
    }
    for (l, &c) in &counts {
        if c < 2 && !output.contains(l) {
            return Err(Error::UnknownLabel(format!("{l} (open leg not in output)")));
        }
    }

    let mut slots: Vec<Option<Live>> = inputs
        .iter()
        .map(|(labels, shape)| {
            Some(Live {
                labels: labels.clone(),
                size: shape.iter().product(),
            })
        })
        .collect();
    let mut steps = Vec::new();
    let mut peak = slots.iter().flatten().map(|l| l.size).max().unwrap_or(1);

    let result_labels = |a: &Live, b: &Live, counts: &HashMap<String, usize>| -> Vec<String> {
        let mut out = Vec::new();
        for l in a.labels.iter().chain(&b.labels) {
            if out.contains(l) {
                continue;
            }
            let shared = a.labels.contains(l) && b.labels.contains(l);
            let keep = output.contains(l) || !shared || counts[l] > 2;
            if keep {
                out.push(l.clone());
            }
        }
        out
    };

    loop {
        let live: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].is_some()).collect();
        if live.len() <= 1 {
            break;
        }
        let mut best: Option<(i128, usize, usize, Vec<String>, usize)> = None;
        for (x, &i) in live.iter().enumerate() {
            for &j in &live[x + 1..] {
                let (a, b) = (slots[i].as_ref().unwrap(), slots[j].as_ref().unwrap());
                if !a.labels.iter().any(|l| b.labels.contains(l)) {
                    continue;
                }
                let out = result_labels(a, b, &counts);
                let size: usize = out.iter().map(|l| dims[l.as_str()]).product();
                let cost = size as i128 - a.size as i128 - b.size as i128;
                if best.as_ref().map_or(true, |bst| cost < bst.0) {
                    best = Some((cost, i, j, out, size));
                }
            }
        }
        let (i, j, out, size) = match best {
            Some((_, i, j, out, size)) => (i, j, out, size),
            None => {
                // disconnected components: outer product of the two smallest
                let mut by_size = live.clone();
                by_size.sort_by_key(|&k| (slots[k].as_ref().unwrap().size, k));
                let (i, j) = (by_size[0].min(by_size[1]), by_size[0].max(by_size[1]));
                let out = result_labels(slots[i].as_ref().unwrap(), slots[j].as_ref().unwrap(), &counts);
                let size = out.iter().map(|l| dims[l.as_str()]).product();
                (i, j, out, size)
            }
        };
        if size.saturating_mul(8) > memory_cap {
            return Err(Error::MemoryCap {
                bytes: size.saturating_mul(8),
                cap: memory_cap,
                labels: out,
            });
        }
        peak = peak.max(size);
        let a = slots[i].take().unwrap();
        let b = slots[j].take().unwrap();
        for l in a.labels.iter().chain(&b.labels) {
            *counts.get_mut(l).unwrap() -= 1;
        }
        for l in &out {
            *counts.get_mut(l).unwrap() += 1;
        }
        steps.push(PlanStep {
            a: i,
            b: j,
            out: out.clone(),
        });
        slots.push(Some(Live { labels: out, size }));
    }
    let result = (0..slots.len())
        .find(|&i| slots[i].is_some())
        .ok_or_else(|| Error::UnknownLabel("empty network".into()))?;
    Ok(ContractionPlan {
        steps,
        result,
        peak_elements: peak,
    })
}
