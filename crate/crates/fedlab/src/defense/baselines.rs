//! Classic robust aggregation baselines.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::FlatParams;
use crate::Real;

fn check_same_len(updates: &[&FlatParams]) -> Result<usize> {
    let first = updates
        .first()
        .ok_or_else(|| Error::invalid("aggregation over zero updates"))?;
    for u in updates {
        if u.len() != first.len() {
            return Err(Error::shape(format!(
                "update lengths differ: {} vs {}",
                u.len(),
                first.len()
            )));
        }
    }
    Ok(first.len())
}

/// Coordinate-wise median. With an even count each coordinate becomes the
/// midpoint of the two middle values.
pub fn median_agg(updates: &[&FlatParams]) -> Result<FlatParams> {
    let dim = check_same_len(updates)?;
    let n = updates.len();
    let mut out = Vec::with_capacity(dim);
    let mut column = vec![0.0f64; n];
    for j in 0..dim {
        for (i, u) in updates.iter().enumerate() {
            column[i] = u.values()[j] as f64;
        }
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite parameter"));
        let med = if n % 2 == 1 {
            column[n / 2]
        } else {
            0.5 * (column[n / 2 - 1] + column[n / 2])
        };
        out.push(med as Real);
    }
    Ok(FlatParams::from_vec(out))
}

/// Multi-Krum settings: `f` tolerated malicious updates, `m` updates kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KrumParams {
    pub f: usize,
    pub m: usize,
}

/// Multi-Krum: score each update by the sum of squared distances to its
/// `n - f - 2` nearest peers, keep the `m` lowest-scoring updates (ties to
/// the lower client id), and average them. Needs `n >= f + 3`.
pub fn multi_krum(
    updates: &BTreeMap<usize, FlatParams>,
    params: &KrumParams,
) -> Result<(FlatParams, Vec<usize>)> {
    let n = updates.len();
    if n < params.f + 3 {
        return Err(Error::invalid(format!(
            "multi-krum needs at least f + 3 = {} updates, got {n}",
            params.f + 3
        )));
    }
    if params.m == 0 || params.m > n {
        return Err(Error::invalid(format!(
            "multi-krum keep count m = {} outside 1..={n}",
            params.m
        )));
    }
    let ids: Vec<usize> = updates.keys().copied().collect();
    let vecs: Vec<&FlatParams> = updates.values().collect();
    check_same_len(&vecs)?;

    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = vecs[i].dist2(vecs[j])?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    let neighbors = n - params.f - 2;
    let mut scored: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|j| *j != i).map(|j| dist[i][j]).collect();
            others.sort_by(|a, b| a.partial_cmp(b).expect("finite distance"));
            let score: f64 = others.iter().take(neighbors).sum();
            (score, ids[i])
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite score").then(a.1.cmp(&b.1)));

    let mut selected: Vec<usize> = scored.iter().take(params.m).map(|(_, id)| *id).collect();
    selected.sort_unstable();
    let chosen: Vec<&FlatParams> = selected.iter().map(|id| &updates[id]).collect();
    let avg = crate::fed::fedavg(&chosen)?;
    Ok((avg, selected))
}
