//! Agglomerative Ward clustering of client updates into a benign and a
//! suspect group.
//!
//! Merging runs until exactly two clusters remain. Distances are updated
//! with the Lance-Williams recurrence, which reproduces the centroid form
//! of Ward's criterion exactly. The larger final cluster is presumed
//! benign; ties fall to the lower intra-cluster variance, then to the
//! cluster containing the smaller client id.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::FlatParams;
use crate::Real;

/// Ids split into a presumed-benign and a suspect group, each ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterSplit {
    pub benign: Vec<usize>,
    pub suspects: Vec<usize>,
}

fn mean(rows: &[&[Real]]) -> Vec<f64> {
    let dim = rows[0].len();
    let mut mu = vec![0.0f64; dim];
    for r in rows {
        for (m, v) in mu.iter_mut().zip(r.iter()) {
            *m += *v as f64;
        }
    }
    let inv = 1.0 / rows.len() as f64;
    for m in &mut mu {
        *m *= inv;
    }
    mu
}

/// Ward linkage between two clusters of parameter vectors:
/// `|A||B| / (|A| + |B|) * ||mu_A - mu_B||^2`.
pub fn ward_distance(a: &[&[Real]], b: &[&[Real]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("ward distance of an empty cluster"));
    }
    let dim = a[0].len();
    if a.iter().chain(b.iter()).any(|r| r.len() != dim) {
        return Err(Error::shape("clusters mix vector lengths"));
    }
    let mu_a = mean(a);
    let mu_b = mean(b);
    let d2: f64 = mu_a
        .iter()
        .zip(&mu_b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    Ok(na * nb / (na + nb) * d2)
}

fn sse(rows: &[&[Real]]) -> f64 {
    let mu = mean(rows);
    rows.iter()
        .map(|r| {
            r.iter()
                .zip(&mu)
                .map(|(v, m)| {
                    let d = *v as f64 - m;
                    d * d
                })
                .sum::<f64>()
        })
        .sum()
}

/// Splits client updates into two groups by greedy Ward agglomeration.
/// A single update is trivially benign.
pub fn cluster_updates(updates: &BTreeMap<usize, FlatParams>) -> Result<ClusterSplit> {
    let n = updates.len();
    if n == 0 {
        return Err(Error::invalid("clustering over zero updates"));
    }
    let ids: Vec<usize> = updates.keys().copied().collect();
    if n == 1 {
        log::debug!("single update from client {}; skipping clustering", ids[0]);
        return Ok(ClusterSplit { benign: ids, suspects: Vec::new() });
    }
    let rows: Vec<&[Real]> = updates.values().map(|p| p.values()).collect();
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::shape("updates mix parameter-vector lengths"));
    }

    // Clusters hold row positions; merging replaces position i and removes
    // position j > i, keeping scan order stable for tie-breaking.
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d2 = 0.0f64;
            for (x, y) in rows[i].iter().zip(rows[j].iter()) {
                let d = *x as f64 - *y as f64;
                d2 += d * d;
            }
            dist[i][j] = 0.5 * d2;
            dist[j][i] = dist[i][j];
        }
    }

    while members.len() > 2 {
        let k = members.len();
        let (mut bi, mut bj, mut best) = (0, 1, f64::INFINITY);
        for i in 0..k {
            for j in (i + 1)..k {
                if dist[i][j] < best {
                    best = dist[i][j];
                    bi = i;
                    bj = j;
                }
            }
        }
        let (ni, nj) = (members[bi].len() as f64, members[bj].len() as f64);
        let dij = dist[bi][bj];
        for t in 0..k {
            if t == bi || t == bj {
                continue;
            }
            let nt = members[t].len() as f64;
            let d = ((ni + nt) * dist[bi][t] + (nj + nt) * dist[bj][t] - nt * dij)
                / (ni + nj + nt);
            dist[bi][t] = d;
            dist[t][bi] = d;
        }
        let moved = members.remove(bj);
        members[bi].extend(moved);
        dist.remove(bj);
        for row in &mut dist {
            row.remove(bj);
        }
    }

    let gather = |positions: &[usize]| -> Vec<&[Real]> {
        positions.iter().map(|p| rows[*p]).collect()
    };
    let (a, b) = (&members[0], &members[1]);
    let benign_first = match a.len().cmp(&b.len()) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => {
            let (sa, sb) = (sse(&gather(a)), sse(&gather(b)));
            if sa != sb {
                sa < sb
            } else {
                // Final tie: the group holding the smallest client id wins.
                a.iter().min() < b.iter().min()
            }
        }
    };
    let (benign_pos, suspect_pos) = if benign_first { (a, b) } else { (b, a) };
    let mut benign: Vec<usize> = benign_pos.iter().map(|p| ids[*p]).collect();
    let mut suspects: Vec<usize> = suspect_pos.iter().map(|p| ids[*p]).collect();
    benign.sort_unstable();
    suspects.sort_unstable();
    Ok(ClusterSplit { benign, suspects })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(v: &[f64]) -> FlatParams {
        FlatParams::from_vec(v.iter().map(|x| *x as Real).collect())
    }

    fn map(vals: &[&[f64]]) -> BTreeMap<usize, FlatParams> {
        vals.iter().enumerate().map(|(i, v)| (i, fp(v))).collect()
    }

    #[test]
    fn ward_distance_of_singletons_is_half_squared_distance() {
        let a = [1.0 as Real, 2.0];
        let b = [4.0 as Real, 6.0];
        let d = ward_distance(&[&a], &[&b]).unwrap();
        assert!((d - 12.5).abs() < 1e-12);
    }

    #[test]
    fn ward_distance_uses_cluster_sizes() {
        let a1 = [0.0 as Real];
        let a2 = [2.0 as Real];
        let b = [5.0 as Real];
        // mu_A = 1, |A| = 2, |B| = 1: 2/3 * 16.
        let d = ward_distance(&[&a1[..], &a2[..]], &[&b[..]]).unwrap();
        assert!((d - 2.0 / 3.0 * 16.0).abs() < 1e-12);
    }

    #[test]
    fn ward_distance_rejects_empty_or_ragged() {
        let a = [0.0 as Real];
        let b = [1.0 as Real, 2.0];
        assert!(ward_distance(&[], &[&a]).is_err());
        assert!(ward_distance(&[&a[..]], &[&b[..]]).is_err());
    }

    #[test]
    fn separates_two_obvious_groups() {
        let split = cluster_updates(&map(&[&[0.0], &[0.1], &[0.2], &[10.0], &[10.1]])).unwrap();
        assert_eq!(split.benign, vec![0, 1, 2]);
        assert_eq!(split.suspects, vec![3, 4]);
    }

    #[test]
    fn minority_attackers_land_in_suspects() {
        let split = cluster_updates(&map(&[
            &[1.0, 1.0],
            &[1.1, 0.9],
            &[0.9, 1.1],
            &[1.05, 1.0],
            &[8.0, -7.0],
            &[8.2, -7.1],
        ]))
        .unwrap();
        assert_eq!(split.benign, vec![0, 1, 2, 3]);
        assert_eq!(split.suspects, vec![4, 5]);
    }

    #[test]
    fn single_update_is_trivially_benign() {
        let split = cluster_updates(&map(&[&[3.0, 4.0]])).unwrap();
        assert_eq!(split.benign, vec![0]);
        assert!(split.suspects.is_empty());
    }

    #[test]
    fn identical_updates_split_deterministically_with_majority_benign() {
        let split = cluster_updates(&map(&[&[1.0], &[1.0], &[1.0], &[1.0], &[1.0]])).unwrap();
        assert!(split.benign.len() >= split.suspects.len());
        assert_eq!(split.benign.len() + split.suspects.len(), 5);
        // Deterministic: same input, same split.
        let again = cluster_updates(&map(&[&[1.0], &[1.0], &[1.0], &[1.0], &[1.0]])).unwrap();
        assert_eq!(split, again);
    }

    #[test]
    fn equal_sized_tie_prefers_tighter_cluster() {
        // Two groups of two: one tight pair, one loose pair.
        let split = cluster_updates(&map(&[&[0.0], &[0.001], &[10.0], &[10.9]])).unwrap();
        assert_eq!(split.benign, vec![0, 1]);
        assert_eq!(split.suspects, vec![2, 3]);
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let mut forward = BTreeMap::new();
        let mut backward = BTreeMap::new();
        let vals: Vec<Vec<f64>> = vec![
            vec![0.0, 0.0],
            vec![0.2, 0.1],
            vec![5.0, 5.0],
            vec![5.1, 4.9],
            vec![0.1, 0.2],
        ];
        for (i, v) in vals.iter().enumerate() {
            forward.insert(i, fp(v));
        }
        for (i, v) in vals.iter().enumerate().rev() {
            backward.insert(i, fp(v));
        }
        assert_eq!(cluster_updates(&forward).unwrap(), cluster_updates(&backward).unwrap());
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(cluster_updates(&BTreeMap::new()).is_err());
    }
}
