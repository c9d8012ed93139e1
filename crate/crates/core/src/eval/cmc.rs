use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::embed::parallel_map;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Cumulative match characteristic: `ranks[k - 1]` is the fraction of probes
/// whose true identity is among the `k` nearest gallery entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub ranks: Vec<f64>,
    pub probes: usize,
}

impl CmcCurve {
    /// Pointwise mean of curves over the same probes; `None` when empty or
    /// when lengths differ.
    pub fn mean(curves: &[CmcCurve]) -> Option<CmcCurve> {
        let first = curves.first()?;
        if curves.iter().any(|c| c.ranks.len() != first.ranks.len()) {
            return None;
        }
        let n = curves.len() as f64;
        let ranks = (0..first.ranks.len()).map(|k| curves.iter().map(|c| c.ranks[k]).sum::<f64>() / n).collect();
        Some(CmcCurve { ranks, probes: first.probes })
    }

    /// Accuracy at rank `k` (1-based); saturates past the stored length.
    pub fn rank(&self, k: usize) -> f64 {
        assert!(k >= 1, "ranks are 1-based");
        self.ranks[(k - 1).min(self.ranks.len() - 1)]
    }

    fn from_positions(positions: &[usize], max_rank: usize) -> Self {
        let mut ranks = vec![0.0; max_rank];
        for &p in positions {
            for r in ranks.iter_mut().skip(p) {
                *r += 1.0;
            }
        }
        let n = positions.len() as f64;
        ranks.iter_mut().for_each(|r| *r /= n);
        Self { ranks, probes: positions.len() }
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rows_of<'a>(m: &'a Tensor, n: usize, what: &str) -> Result<Vec<&'a [f64]>> {
    if m.rank() != 2 || m.shape()[0] != n {
        return Err(Error::shape("cmc", format!("{what} embeddings {:?} for {n} ids", m.shape())));
    }
    Ok(m.data().chunks(m.shape()[1].max(1)).take(n).collect())
}

fn check(probe: &Tensor, probe_ids: &[u32], gallery: &Tensor, gallery_ids: &[u32], max_rank: usize) -> Result<usize> {
    if probe_ids.is_empty() {
        return Err(Error::InvalidArgument("no probes".into()));
    }
    if max_rank == 0 || max_rank > gallery_ids.len() {
        return Err(Error::InvalidArgument(format!("max_rank {max_rank} outside 1..={}", gallery_ids.len())));
    }
    if probe.rank() == 2 && gallery.rank() == 2 && probe.shape()[1] != gallery.shape()[1] {
        return Err(Error::shape("cmc", format!("probe {:?} vs gallery {:?}", probe.shape(), gallery.shape())));
    }
    let unique: BTreeSet<u32> = gallery_ids.iter().copied().collect();
    if unique.len() != gallery_ids.len() {
        return Err(Error::InvalidArgument("gallery identities must be unique".into()));
    }
    if let Some(id) = probe_ids.iter().find(|id| !unique.contains(id)) {
        return Err(Error::InvalidArgument(format!("probe identity {id} is absent from the gallery")));
    }
    Ok(gallery_ids.len())
}

/// 0-based rank of each probe's true match: gallery ordered by ascending
/// squared distance, ties by ascending gallery index.
pub fn match_positions(probe: &Tensor, probe_ids: &[u32], gallery: &Tensor, gallery_ids: &[u32]) -> Result<Vec<usize>> {
    check(probe, probe_ids, gallery, gallery_ids, 1)?;
    let p = rows_of(probe, probe_ids.len(), "probe")?;
    let g = rows_of(gallery, gallery_ids.len(), "gallery")?;
    Ok(parallel_map(p.len(), |i| {
        let truth = gallery_ids.iter().position(|&id| id == probe_ids[i]).expect("checked");
        let d_truth = squared_distance(p[i], g[truth]);
        g.iter()
            .enumerate()
            .filter(|&(k, row)| {
                let d = squared_distance(p[i], row);
                d < d_truth || (d == d_truth && k < truth)
            })
            .count()
    }))
}

pub fn cmc(probe: &Tensor, probe_ids: &[u32], gallery: &Tensor, gallery_ids: &[u32], max_rank: usize) -> Result<CmcCurve> {
    check(probe, probe_ids, gallery, gallery_ids, max_rank)?;
    let positions = match_positions(probe, probe_ids, gallery, gallery_ids)?;
    Ok(CmcCurve::from_positions(&positions, max_rank))
}

/// Reference implementation: fully sorts the gallery for every probe.
pub fn cmc_oracle(probe: &Tensor, probe_ids: &[u32], gallery: &Tensor, gallery_ids: &[u32], max_rank: usize) -> Result<CmcCurve> {
    check(probe, probe_ids, gallery, gallery_ids, max_rank)?;
    let p = rows_of(probe, probe_ids.len(), "probe")?;
    let g = rows_of(gallery, gallery_ids.len(), "gallery")?;
    let mut hits = vec![0usize; max_rank];
    for (row, id) in p.iter().zip(probe_ids) {
        let mut order: Vec<(f64, usize)> = g.iter().enumerate().map(|(k, gr)| (squared_distance(row, gr), k)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (k, hit) in hits.iter_mut().enumerate() {
            if order[..=k].iter().any(|&(_, gi)| gallery_ids[gi] == *id) {
                *hit += 1;
            }
        }
    }
    Ok(CmcCurve { ranks: hits.iter().map(|&h| h as f64 / p.len() as f64).collect(), probes: p.len() })
}
