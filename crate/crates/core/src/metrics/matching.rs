//! Minimum-cost assignment and the sequence-matching metrics built on it.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::PoseSequence;

/// A minimum-cost matching of `min(R, C)` row/column pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(row, column)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Hungarian algorithm (shortest augmenting paths with potentials), `O(n²m)`.
pub fn hungarian(cost: ArrayView2<f64>) -> Result<Assignment> {
    let (r, c) = cost.dim();
    if r == 0 || c == 0 {
        return Err(Error::Input("assignment needs a non-empty cost matrix".into()));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("assignment costs must be finite".into()));
    }
    if r > c {
        let t = hungarian(cost.t())?;
        let mut pairs: Vec<_> = t.pairs.into_iter().map(|(a, b)| (b, a)).collect();
        pairs.sort_unstable();
        return Ok(Assignment { pairs, cost: t.cost });
    }
    // 1-based potentials and matching; column 0 is the virtual start.
    let (n, m) = (r, c);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| cost[[i, j]]).sum();
    Ok(Assignment { pairs, cost: total })
}

/// `T_a×T_b` matrix of Euclidean distances between frames.
pub fn frame_distances(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Input(format!(
            "pose dimensions differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.rows().into_iter().enumerate() {
        for (j, rb) in b.rows().into_iter().enumerate() {
            out[[i, j]] = ra.iter().zip(rb.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        }
    }
    Ok(out)
}

/// Hungarian matching cost between the two sequences' frames, divided by the shorter length.
pub fn sequence_distance(generated: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if generated.nrows() == 0 || target.nrows() == 0 {
        return Err(Error::Input("sequence distance needs non-empty sequences".into()));
    }
    let d = frame_distances(generated, target)?;
    Ok(hungarian(d.view())?.cost / generated.nrows().min(target.nrows()) as f64)
}

/// Cheap lower bound on [`sequence_distance`] from row and column minima.
fn distance_lower_bound(d: &Array2<f64>) -> f64 {
    let (r, c) = d.dim();
    let mut mins: Vec<f64> = if r <= c {
        d.rows().into_iter().map(|row| row.fold(f64::INFINITY, |m, &v| m.min(v))).collect()
    } else {
        d.columns().into_iter().map(|col| col.fold(f64::INFINITY, |m, &v| m.min(v))).collect()
    };
    // Every pair uses a distinct row and column, so the smallest min(r, c)
    // column minima bound the cost as well.
    let mut other: Vec<f64> = if r <= c {
        d.columns().into_iter().map(|col| col.fold(f64::INFINITY, |m, &v| m.min(v))).collect()
    } else {
        d.rows().into_iter().map(|row| row.fold(f64::INFINITY, |m, &v| m.min(v))).collect()
    };
    let n = r.min(c);
    other.sort_unstable_by(f64::total_cmp);
    mins.sort_unstable_by(f64::total_cmp);
    let a: f64 = mins.iter().sum();
    let b: f64 = other[..n].iter().sum();
    a.max(b) / n as f64
}

/// Index and distance of the closest target sequence; ties go to the lowest index.
pub fn nearest_sequence(query: &PoseSequence, targets: &[PoseSequence]) -> Result<(usize, f64)> {
    if targets.is_empty() {
        return Err(Error::Input("no target sequences to match against".into()));
    }
    let mut candidates = Vec::with_capacity(targets.len());
    for (i, t) in targets.iter().enumerate() {
        let d = frame_distances(query.frames.view(), t.frames.view())?;
        candidates.push((distance_lower_bound(&d), i, d));
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best: Option<(usize, f64)> = None;
    for (bound, i, d) in candidates {
        if let Some((_, bd)) = best {
            if bound > bd {
                break;
            }
        }
        let dist = hungarian(d.view())?.cost / d.nrows().min(d.ncols()) as f64;
        best = match best {
            Some((bi, bd)) if dist > bd || (dist == bd && bi < i) => Some((bi, bd)),
            _ => Some((i, dist)),
        };
    }
    Ok(best.expect("targets are non-empty"))
}

/// How conditioning labels are compared with the matched sequence's labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMatch {
    /// Equal label lists, order included.
    #[default]
    Ordered,
    /// Equal as multisets.
    Multiset,
}

impl LabelMatch {
    pub fn matches(self, a: &[usize], b: &[usize]) -> bool {
        match self {
            LabelMatch::Ordered => a == b,
            LabelMatch::Multiset => {
                let (mut x, mut y) = (a.to_vec(), b.to_vec());
                x.sort_unstable();
                y.sort_unstable();
                x == y
            }
        }
    }
}

/// Fraction of generated sequences whose labels equal those of their nearest ground-truth sequence.
pub fn semantic_consistency(generated: &[PoseSequence], gt: &[PoseSequence], mode: LabelMatch) -> Result<f64> {
    if generated.is_empty() || gt.is_empty() {
        return Err(Error::Input("semantic consistency needs non-empty sets".into()));
    }
    let mut hits = 0;
    for g in generated {
        let (i, _) = nearest_sequence(g, gt)?;
        if mode.matches(&g.script.labels(), &gt[i].script.labels()) {
            hits += 1;
        }
    }
    Ok(hits as f64 / generated.len() as f64)
}
