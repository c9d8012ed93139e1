use serde::{Deserialize, Serialize};

use super::cmc::{cmc, CmcCurve};
use crate::autodiff::Tensor;
use crate::data::{split_domains, SplitPolicy};
use crate::error::{Error, Result};
use crate::nn::ReidBackbone;
use crate::reid::ImageSample;

const EMBED_CHUNK: usize = 64;

/// Worker count: `SCIMGAN_THREADS` when set to a positive integer, else the
/// machine's available parallelism.
pub fn thread_count() -> usize {
    std::env::var("SCIMGAN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// `f(0..n)` in order, spread over contiguous index blocks.
pub(crate) fn parallel_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = thread_count().min(n.max(1));
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let block = n.div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(block)
            .map(|start| s.spawn(move || (start..(start + block).min(n)).map(f).collect::<Vec<T>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// `(N, D)` verification-tap features, row `i` for `samples[i]`.
pub fn extract_embeddings(backbone: &ReidBackbone, samples: &[ImageSample]) -> Result<Tensor> {
    let want = backbone.network().input_shape().dims();
    if let Some(s) = samples.iter().find(|s| s.image.shape() != want.as_slice()) {
        return Err(Error::shape("extract_embeddings", format!("image {:?}, backbone takes {want:?}", s.image.shape())));
    }
    if samples.is_empty() {
        return Ok(Tensor::zeros(&[0, backbone.feature_dim()]));
    }
    let chunks = samples.len().div_ceil(EMBED_CHUNK);
    let parts = parallel_map(chunks, |c| {
        let images: Vec<&Tensor> = samples[c * EMBED_CHUNK..((c + 1) * EMBED_CHUNK).min(samples.len())]
            .iter()
            .map(|s| &s.image)
            .collect();
        backbone.embed(&Tensor::stack(&images)?)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())
}

/// Scales each row to unit length (rows of zeros stay zero).
pub fn normalize_rows(m: &Tensor) -> Tensor {
    let d = m.shape().get(1).copied().unwrap_or(1).max(1);
    let mut out = m.clone();
    for row in out.data_mut().chunks_mut(d) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// CMC of `probe` against `gallery` through the backbone.
pub fn evaluate_split(
    backbone: &ReidBackbone,
    gallery: &[ImageSample],
    probe: &[ImageSample],
    normalize: bool,
    max_rank: usize,
) -> Result<CmcCurve> {
    let mut g = extract_embeddings(backbone, gallery)?;
    let mut p = extract_embeddings(backbone, probe)?;
    if normalize {
        g = normalize_rows(&g);
        p = normalize_rows(&p);
    }
    let gid: Vec<u32> = gallery.iter().map(|s| s.identity).collect();
    let pid: Vec<u32> = probe.iter().map(|s| s.identity).collect();
    cmc(&p, &pid, &g, &gid, max_rank.min(gallery.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainReport {
    pub eval_domain: u16,
    /// Probe camera → gallery camera as configured in the policy.
    pub forward: CmcCurve,
    /// Cameras exchanged, with its own gallery draw.
    pub backward: CmcCurve,
    pub forward_split: String,
    pub backward_split: String,
}

/// Evaluates on the policy's held-out domain in both camera directions.
/// Fails if any training sample, real or translated, comes from that domain.
pub fn cross_domain_eval(
    backbone: &ReidBackbone,
    train: &[ImageSample],
    domains: &[Vec<ImageSample>],
    policy: &SplitPolicy,
    normalize: bool,
    max_rank: usize,
) -> Result<CrossDomainReport> {
    if let Some(s) = train.iter().find(|s| s.domain == policy.eval_domain) {
        return Err(Error::Leakage(format!(
            "training sample of identity {} ({}) is from held-out domain {}",
            s.identity,
            if s.is_synthetic { "translated" } else { "real" },
            policy.eval_domain
        )));
    }
    let back_policy = policy.swapped();
    let fwd = split_domains(domains, policy)?;
    let bwd = split_domains(domains, &back_policy)?;
    Ok(CrossDomainReport {
        eval_domain: policy.eval_domain,
        forward: evaluate_split(backbone, &fwd.gallery, &fwd.probe, normalize, max_rank)?,
        backward: evaluate_split(backbone, &bwd.gallery, &bwd.probe, normalize, max_rank)?,
        forward_split: fwd.policy_id,
        backward_split: bwd.policy_id,
    })
}
