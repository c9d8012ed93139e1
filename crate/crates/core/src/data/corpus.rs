use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::render::{domain_styles, identity_templates, render_sample, DomainStyle, IdentityTemplate};
use crate::error::{Error, Result};
use crate::orchestrator::Registry;
use crate::reid::ImageSample;
use crate::rng::Rng;

/// Everything that determines a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_identities: usize,
    pub n_domains: usize,
    pub images_per_id_per_domain: usize,
    pub cameras: u16,
    pub image: [usize; 3],
    pub noise_sigma: f64,
    /// Photometric difference between cameras of one domain.
    pub camera_strength: f64,
    pub min_identity_separation: f64,
    pub min_style_delta: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_identities: 20,
            n_domains: 3,
            images_per_id_per_domain: 4,
            cameras: 2,
            image: [3, 16, 16],
            noise_sigma: 0.03,
            camera_strength: 0.15,
            min_identity_separation: 0.2,
            min_style_delta: 0.15,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 3 {
            return Err(Error::InvalidArgument(format!("need at least 3 identities, got {}", self.n_identities)));
        }
        if self.n_domains < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 domains, got {}", self.n_domains)));
        }
        if self.images_per_id_per_domain == 0 || self.cameras == 0 {
            return Err(Error::InvalidArgument("image and camera counts must be positive".into()));
        }
        if self.n_domains > u16::MAX as usize || self.n_identities > u32::MAX as usize {
            return Err(Error::InvalidArgument("too many domains or identities".into()));
        }
        Ok(())
    }
}

/// Per-domain sample lists plus the generating parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub styles: Vec<DomainStyle>,
    pub templates: Vec<IdentityTemplate>,
    pub domains: Vec<Vec<ImageSample>>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.domains.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All samples, domain by domain.
    pub fn samples(&self) -> Vec<ImageSample> {
        self.domains.iter().flatten().cloned().collect()
    }
}

/// Renders every identity in every domain. Sample `k` of identity `i` in
/// domain `d` uses camera `k mod cameras` and its own derived stream, so the
/// result does not depend on generation order.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let templates = identity_templates(config.n_identities, config.min_identity_separation, config.seed)?;
    let styles = domain_styles(config.n_domains, config.min_style_delta, config.noise_sigma, config.seed)?;
    let per = config.images_per_id_per_domain;
    let mut domains = Vec::with_capacity(config.n_domains);
    for (d, style) in styles.iter().enumerate() {
        let mut samples = Vec::with_capacity(config.n_identities * per);
        for t in &templates {
            for k in 0..per {
                let index = ((d * config.n_identities + t.identity as usize) * per + k) as u64;
                let mut rng = Rng::derive(config.seed, "render", index);
                let camera = (k % config.cameras as usize) as u16;
                samples.push(render_sample(t, style, d as u16, camera, config.camera_strength, config.image, &mut rng)?);
            }
        }
        domains.push(samples);
    }
    Ok(Corpus { config: config.clone(), styles, templates, domains })
}

/// Samples grouped by their domain id; domains without samples stay empty.
pub fn group_by_domain(samples: &[ImageSample]) -> Vec<Vec<ImageSample>> {
    let n = samples.iter().map(|s| s.domain as usize + 1).max().unwrap_or(0);
    let mut out = vec![Vec::new(); n];
    for s in samples {
        out[s.domain as usize].push(s.clone());
    }
    out
}

/// How a corpus is divided into training, gallery and probe sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPolicy {
    /// Domains whose real images may be used for training.
    pub train_domains: Vec<u16>,
    /// Domain providing gallery and probe images.
    pub eval_domain: u16,
    /// Identities reserved for evaluation.
    pub test_identities: usize,
    /// Test identities also appear in the training set.
    pub overlap_identities: bool,
    /// Each training identity is used in a single training domain only.
    pub identity_disjoint_domains: bool,
    pub probe_camera: u16,
    pub gallery_camera: u16,
    pub seed: u64,
}

impl SplitPolicy {
    /// Train and evaluate within one domain on disjoint identities.
    pub fn within_domain(domain: u16, test_identities: usize, seed: u64) -> Self {
        Self {
            train_domains: vec![domain],
            eval_domain: domain,
            test_identities,
            overlap_identities: false,
            identity_disjoint_domains: false,
            probe_camera: 0,
            gallery_camera: 1,
            seed,
        }
    }

    /// Train on every domain but `held_out`, each with its own people, and
    /// evaluate on `held_out`.
    pub fn cross_domain(n_domains: u16, held_out: u16, test_identities: usize, seed: u64) -> Self {
        Self {
            train_domains: (0..n_domains).filter(|&d| d != held_out).collect(),
            eval_domain: held_out,
            test_identities,
            overlap_identities: false,
            identity_disjoint_domains: true,
            probe_camera: 0,
            gallery_camera: 1,
            seed,
        }
    }

    /// Same split with probe and gallery cameras exchanged.
    pub fn swapped(&self) -> Self {
        Self { probe_camera: self.gallery_camera, gallery_camera: self.probe_camera, ..self.clone() }
    }

    pub fn id(&self) -> String {
        let train: Vec<String> = self.train_domains.iter().map(u16::to_string).collect();
        format!(
            "train[{}]-eval{}-test{}-{}{}-cam{}to{}-seed{}",
            train.join(","),
            self.eval_domain,
            self.test_identities,
            if self.overlap_identities { "overlap" } else { "disjoint" },
            if self.identity_disjoint_domains { "-perdomain" } else { "" },
            self.probe_camera,
            self.gallery_camera,
            self.seed
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<ImageSample>,
    pub gallery: Vec<ImageSample>,
    pub probe: Vec<ImageSample>,
    pub policy_id: String,
}

/// Applies a split policy. Test identities are a seeded choice; the gallery
/// holds one seeded image per test identity from the gallery camera and the
/// probe set every image of those identities from the probe camera.
pub fn make_splits(corpus: &Corpus, policy: &SplitPolicy) -> Result<DatasetSplit> {
    split_domains(&corpus.domains, policy)
}

/// [`make_splits`] over per-domain sample lists; the identity universe is
/// every identity that appears in any of them.
pub fn split_domains(domains: &[Vec<ImageSample>], policy: &SplitPolicy) -> Result<DatasetSplit> {
    let n_domains = domains.len();
    for &d in policy.train_domains.iter().chain([&policy.eval_domain]) {
        if d as usize >= n_domains {
            return Err(Error::UnknownDomain(d as usize));
        }
    }
    if policy.probe_camera == policy.gallery_camera {
        return Err(Error::InvalidArgument("probe and gallery cameras must differ".into()));
    }
    let mut ids: Vec<u32> = domains.iter().flatten().map(|s| s.identity).collect::<BTreeSet<u32>>().into_iter().collect();
    let n = ids.len();
    if policy.test_identities == 0 || policy.test_identities > n {
        return Err(Error::InvalidArgument(format!("{} test identities out of {n}", policy.test_identities)));
    }
    Rng::derive(policy.seed, "split-identities", 0).shuffle(&mut ids);
    let test: BTreeSet<u32> = ids[..policy.test_identities].iter().copied().collect();
    let train_ids: Vec<u32> = if policy.overlap_identities { ids.clone() } else { ids[policy.test_identities..].to_vec() };

    // Training identity → the single domain it may use, when domains are identity-disjoint.
    let home: BTreeMap<u32, u16> = train_ids
        .iter()
        .enumerate()
        .map(|(k, &id)| (id, policy.train_domains[k % policy.train_domains.len()]))
        .collect();
    let mut train = Vec::new();
    for &d in &policy.train_domains {
        for s in &domains[d as usize] {
            let allowed = match home.get(&s.identity) {
                None => false,
                Some(&h) => !policy.identity_disjoint_domains || h == d,
            };
            if allowed && !s.is_synthetic {
                train.push(s.clone());
            }
        }
    }

    let mut by_id: BTreeMap<u32, (Vec<&ImageSample>, Vec<&ImageSample>)> = BTreeMap::new();
    for s in &domains[policy.eval_domain as usize] {
        if !test.contains(&s.identity) || s.is_synthetic {
            continue;
        }
        let e = by_id.entry(s.identity).or_default();
        if s.camera == policy.gallery_camera {
            e.0.push(s);
        } else if s.camera == policy.probe_camera {
            e.1.push(s);
        }
    }
    let mut rng = Rng::derive(policy.seed, "gallery", ((policy.eval_domain as u64) << 16) | policy.gallery_camera as u64);
    let (mut gallery, mut probe) = (Vec::new(), Vec::new());
    for id in &test {
        let Some((g, p)) = by_id.get(id) else {
            return Err(Error::Dataset(format!("test identity {id} missing from domain {}", policy.eval_domain)));
        };
        if g.is_empty() || p.is_empty() {
            return Err(Error::Dataset(format!("test identity {id} lacks images from both evaluation cameras")));
        }
        gallery.push(g[rng.below(g.len())].clone());
        probe.extend(p.iter().map(|s| (*s).clone()));
    }
    Ok(DatasetSplit { train, gallery, probe, policy_id: policy.id() })
}

/// Appends, for every real sample, its translation into each other registry
/// domain. `slots[k]` is the corpus domain id of registry domain `k`.
pub fn augment_with_translations(samples: &[ImageSample], registry: &Registry, slots: &[u16]) -> Result<Vec<ImageSample>> {
    if slots.len() != registry.n_domains() {
        return Err(Error::Dataset(format!(
            "{} domain ids given for a registry of {} domains",
            slots.len(),
            registry.n_domains()
        )));
    }
    let mut out = samples.to_vec();
    for s in samples.iter().filter(|s| !s.is_synthetic) {
        let src = slots
            .iter()
            .position(|&d| d == s.domain)
            .ok_or_else(|| Error::Dataset(format!("sample domain {} has no translation components", s.domain)))?;
        for (dst, image) in registry.translate_to_all(&s.image, src)? {
            out.push(ImageSample { image, identity: s.identity, domain: slots[dst], camera: s.camera, is_synthetic: true });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::nn::NetworkProfile;

    #[test]
    fn default_corpus_counts_and_determinism() {
        let c = generate_corpus(&CorpusConfig::default()).unwrap();
        assert_eq!(c.len(), 240);
        assert_eq!(c, generate_corpus(&CorpusConfig::default()).unwrap());
        assert!(generate_corpus(&CorpusConfig { n_identities: 2, ..Default::default() }).is_err());
        assert!(generate_corpus(&CorpusConfig { n_domains: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn identities_are_separable_by_nearest_centroid() {
        let cfg = CorpusConfig { images_per_id_per_domain: 5, ..Default::default() };
        let c = generate_corpus(&cfg).unwrap();
        for domain in &c.domains {
            let mut correct = 0;
            for id in 0..cfg.n_identities as u32 {
                let imgs: Vec<&ImageSample> = domain.iter().filter(|s| s.identity == id).collect();
                let held = imgs[imgs.len() - 1];
                let mut best = (f64::INFINITY, u32::MAX);
                for other in 0..cfg.n_identities as u32 {
                    let train: Vec<&Tensor> = domain
                        .iter()
                        .filter(|s| s.identity == other && !std::ptr::eq(*s, held))
                        .map(|s| &s.image)
                        .collect();
                    let mut centroid = vec![0.0; held.image.len()];
                    for t in &train {
                        centroid.iter_mut().zip(t.data()).for_each(|(c, v)| *c += v / train.len() as f64);
                    }
                    let d: f64 = centroid.iter().zip(held.image.data()).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best.0 {
                        best = (d, other);
                    }
                }
                correct += (best.1 == id) as usize;
            }
            assert!(correct as f64 >= 0.9 * cfg.n_identities as f64, "{correct}");
        }
    }

    #[test]
    fn split_invariants() {
        let c = generate_corpus(&CorpusConfig::default()).unwrap();
        let p = SplitPolicy::within_domain(1, 8, 3);
        let s = make_splits(&c, &p).unwrap();
        let g: BTreeSet<u32> = s.gallery.iter().map(|x| x.identity).collect();
        let q: BTreeSet<u32> = s.probe.iter().map(|x| x.identity).collect();
        assert_eq!(g, q);
        assert_eq!(s.gallery.len(), 8);
        assert!(s.gallery.iter().all(|x| x.camera == 1) && s.probe.iter().all(|x| x.camera == 0));
        assert!(s.train.iter().all(|x| !g.contains(&x.identity) && x.domain == 1));
        assert_eq!(s.train.len(), 12 * 4);
        assert_eq!(s, make_splits(&c, &p).unwrap());
        let flipped = make_splits(&c, &p.swapped()).unwrap();
        assert_eq!(flipped.train, s.train);
        assert!(flipped.gallery.iter().all(|x| x.camera == 0));
    }

    #[test]
    fn cross_domain_split_keeps_the_held_out_domain_out() {
        let c = generate_corpus(&CorpusConfig::default()).unwrap();
        let s = make_splits(&c, &SplitPolicy::cross_domain(3, 2, 10, 0)).unwrap();
        assert!(s.train.iter().all(|x| x.domain != 2));
        assert!(s.gallery.iter().chain(&s.probe).all(|x| x.domain == 2));
        let mut homes: BTreeMap<u32, BTreeSet<u16>> = BTreeMap::new();
        for x in &s.train {
            homes.entry(x.identity).or_default().insert(x.domain);
        }
        assert!(homes.values().all(|d| d.len() == 1));
        assert_eq!(homes.len(), 10);
    }

    #[test]
    fn augmentation_adds_labelled_translations() {
        let c = generate_corpus(&CorpusConfig::default()).unwrap();
        let reg = Registry::new(NetworkProfile::desk(), 3, 0).unwrap();
        let all = c.samples();
        let aug = augment_with_translations(&all, &reg, &[0, 1, 2]).unwrap();
        assert_eq!(aug.len(), 240 + 480);
        let synth: Vec<&ImageSample> = aug.iter().filter(|s| s.is_synthetic).collect();
        assert_eq!(synth.len(), 480);
        // Sample k's translations follow the real samples in source order.
        for (k, src) in all.iter().enumerate() {
            let outs = &synth[2 * k..2 * k + 2];
            for o in outs {
                assert_eq!(o.identity, src.identity);
                assert_ne!(o.domain, src.domain);
            }
        }
        assert!(augment_with_translations(&all, &reg, &[0, 1]).is_err());
        let two = Registry::new(NetworkProfile::desk(), 2, 0).unwrap();
        assert!(augment_with_translations(&all, &two, &[0, 1]).is_err());
    }
}
