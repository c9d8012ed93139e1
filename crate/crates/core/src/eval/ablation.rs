use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::cmc::CmcCurve;
use super::embed::{cross_domain_eval, evaluate_split};
use crate::autodiff::Tensor;
use crate::data::{augment_with_translations, generate_corpus, split_domains, CorpusConfig, DatasetSplit, SplitPolicy};
use crate::error::{Error, Result};
use crate::gan::LossWeights;
use crate::nn::{NetworkProfile, ReidBackbone};
use crate::orchestrator::{GanSettings, GanTrainer, Registry};
use crate::rng::Rng;
use crate::reid::{ImageSample, ReidSettings, ReidTrainer, VerificationLoss};

/// Which translation model, if any, supplies extra positives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanVariant {
    None,
    /// Adversarial and cycle terms only.
    McGan,
    /// Adds identity mapping.
    Imgan,
    /// Adds semantic consistency.
    ScImgan,
}

impl GanVariant {
    pub const ALL: [GanVariant; 4] = [GanVariant::None, GanVariant::McGan, GanVariant::Imgan, GanVariant::ScImgan];

    pub fn name(self) -> &'static str {
        match self {
            GanVariant::None => "none",
            GanVariant::McGan => "mc_gan",
            GanVariant::Imgan => "imgan",
            GanVariant::ScImgan => "sc_imgan",
        }
    }

    /// Loss weights derived from the full set, or `None` for no translation.
    pub fn weights(self, full: LossWeights) -> Option<LossWeights> {
        match self {
            GanVariant::None => None,
            GanVariant::McGan => Some(LossWeights { lambda_id: 0.0, lambda_sem: 0.0, ..full }),
            GanVariant::Imgan => Some(LossWeights { lambda_sem: 0.0, ..full }),
            GanVariant::ScImgan => Some(full),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AblationConfig {
    pub loss: VerificationLoss,
    pub gan: GanVariant,
}

impl AblationConfig {
    pub fn new(loss: VerificationLoss, gan: GanVariant) -> Self {
        Self { loss, gan }
    }

    pub fn name(&self) -> String {
        format!("{}+{}", self.gan.name(), self.loss.name())
    }

    /// Every loss with every translation variant.
    pub fn lattice() -> Vec<Self> {
        GanVariant::ALL
            .iter()
            .flat_map(|&g| VerificationLoss::ALL.iter().map(move |&l| Self::new(l, g)))
            .collect()
    }

    /// The three losses without translation, then each translation variant
    /// with the improved quartet loss.
    pub fn standard_rows() -> Vec<Self> {
        let mut rows: Vec<Self> = VerificationLoss::ALL.iter().map(|&l| Self::new(l, GanVariant::None)).collect();
        rows.extend(
            [GanVariant::McGan, GanVariant::Imgan, GanVariant::ScImgan]
                .iter()
                .map(|&g| Self::new(VerificationLoss::ImprovedQuartet, g)),
        );
        rows
    }
}

/// Where training data comes from and where it is evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Disjoint identities of one domain for training and testing; the
    /// translation model sees every domain's training identities.
    WithinDomain { domain: u16 },
    /// The last-listed domain is never seen in training; both camera
    /// directions are evaluated.
    CrossDomain { held_out: u16 },
}

impl Protocol {
    pub fn policy(&self, n_domains: u16, test_identities: usize, seed: u64) -> SplitPolicy {
        match *self {
            Protocol::WithinDomain { domain } => SplitPolicy::within_domain(domain, test_identities, seed),
            Protocol::CrossDomain { held_out } => SplitPolicy::cross_domain(n_domains, held_out, test_identities, seed),
        }
    }
}

/// Everything but the seed and the row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSetup {
    pub profile: NetworkProfile,
    pub corpus: CorpusConfig,
    pub gan: GanSettings,
    pub reid: ReidSettings,
    pub protocol: Protocol,
    pub test_identities: usize,
    pub max_rank: usize,
    /// Re-identification restarts per cell on the same training data, each
    /// with its own initialization and quartet stream; curves are averaged.
    pub reid_repeats: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionResult {
    pub direction: String,
    pub curve: CmcCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub config: AblationConfig,
    pub seed: u64,
    /// One entry per evaluated camera direction, or the failure.
    pub outcome: std::result::Result<Vec<DirectionResult>, String>,
}

impl CellResult {
    /// Rank-1 averaged over directions.
    pub fn rank1(&self) -> Option<f64> {
        let dirs = self.outcome.as_ref().ok()?;
        Some(dirs.iter().map(|d| d.curve.rank(1)).sum::<f64>() / dirs.len() as f64)
    }

    pub fn rank1_in(&self, direction: &str) -> Option<f64> {
        self.outcome.as_ref().ok()?.iter().find(|d| d.direction == direction).map(|d| d.curve.rank(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub format_version: u32,
    pub setup: ExperimentSetup,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl AblationReport {
    pub fn configs(&self) -> Vec<AblationConfig> {
        let mut seen = Vec::new();
        for c in &self.cells {
            if !seen.contains(&c.config) {
                seen.push(c.config);
            }
        }
        seen
    }

    pub fn cells_for(&self, config: AblationConfig) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(move |c| c.config == config)
    }

    /// Median over seeds of the direction-averaged rank-1; failed cells are skipped.
    pub fn median_rank1(&self, config: AblationConfig) -> Option<f64> {
        median(self.cells_for(config).filter_map(CellResult::rank1).collect())
    }

    pub fn median_rank1_in(&self, config: AblationConfig, direction: &str) -> Option<f64> {
        median(self.cells_for(config).filter_map(|c| c.rank1_in(direction)).collect())
    }

    /// One row per cell and direction: `config,seed,direction,rank1,rank5,rank10,error`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("config,seed,direction,rank1,rank5,rank10,error\n");
        for c in &self.cells {
            match &c.outcome {
                Ok(dirs) => {
                    for d in dirs {
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{},",
                            c.config.name(),
                            c.seed,
                            d.direction,
                            d.curve.rank(1),
                            d.curve.rank(5),
                            d.curve.rank(10)
                        );
                    }
                }
                Err(e) => {
                    let _ = writeln!(s, "{},{},,,,,\"{}\"", c.config.name(), c.seed, e.replace('"', "'"));
                }
            }
        }
        s
    }

    /// Rows of configs, a column per seed plus the median rank-1 (in percent).
    pub fn summary_table(&self) -> String {
        let mut s = format!("{:<28}", "config");
        for seed in &self.seeds {
            let _ = write!(s, " {:>8}", format!("s{seed}"));
        }
        s.push_str("   median\n");
        for config in self.configs() {
            let _ = write!(s, "{:<28}", config.name());
            for seed in &self.seeds {
                let cell = self.cells_for(config).find(|c| c.seed == *seed).and_then(CellResult::rank1);
                match cell {
                    Some(v) => {
                        let _ = write!(s, " {:>8.1}", 100.0 * v);
                    }
                    None => {
                        let _ = write!(s, " {:>8}", "failed");
                    }
                }
            }
            match self.median_rank1(config) {
                Some(m) => {
                    let _ = writeln!(s, " {:>8.1}", 100.0 * m);
                }
                None => s.push_str("        -\n"),
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Corpus, split and translator inputs of one seed, shared by every row.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub domains: Vec<Vec<ImageSample>>,
    pub policy: SplitPolicy,
    pub split: DatasetSplit,
    /// Corpus domains the translation model covers, in registry order.
    pub gan_domains: Vec<u16>,
    /// Training images for the translation model, per registry domain.
    pub gan_data: Vec<Vec<Tensor>>,
}

impl ExperimentData {
    /// Generates the corpus for `seed` and splits it.
    pub fn generate(setup: &ExperimentSetup, seed: u64) -> Result<Self> {
        let corpus = generate_corpus(&CorpusConfig { seed, ..setup.corpus.clone() })?;
        Self::from_domains(setup, corpus.domains, seed)
    }

    /// Splits existing per-domain samples. Within a domain, the translator
    /// sees every domain's non-test identities; across domains, only the
    /// training split.
    pub fn from_domains(setup: &ExperimentSetup, domains: Vec<Vec<ImageSample>>, seed: u64) -> Result<Self> {
        let n = domains.len() as u16;
        let policy = setup.protocol.policy(n, setup.test_identities, seed);
        let split = split_domains(&domains, &policy)?;
        let test: BTreeSet<u32> = split.gallery.iter().map(|s| s.identity).collect();
        let (gan_domains, gan_data) = match setup.protocol {
            Protocol::WithinDomain { .. } => {
                let data = domains
                    .iter()
                    .map(|d| {
                        d.iter().filter(|s| !s.is_synthetic && !test.contains(&s.identity)).map(|s| s.image.clone()).collect()
                    })
                    .collect();
                ((0..n).collect(), data)
            }
            Protocol::CrossDomain { .. } => {
                let data = policy
                    .train_domains
                    .iter()
                    .map(|&d| split.train.iter().filter(|s| s.domain == d).map(|s| s.image.clone()).collect())
                    .collect();
                (policy.train_domains.clone(), data)
            }
        };
        Ok(Self { domains, policy, split, gan_domains, gan_data })
    }

    /// A fresh, untrained translator over [`Self::gan_domains`].
    pub fn translator(&self, setup: &ExperimentSetup, seed: u64, weights: LossWeights) -> Result<GanTrainer> {
        let registry = Registry::new(setup.profile.clone(), self.gan_domains.len(), seed)?;
        GanTrainer::new(registry, GanSettings { weights, seed, ..setup.gan.clone() })
    }

    pub fn train_translator(&self, setup: &ExperimentSetup, seed: u64, weights: LossWeights) -> Result<Registry> {
        let mut trainer = self.translator(setup, seed, weights)?;
        trainer.train_all(&self.gan_data, |_| Ok(()))?;
        Ok(trainer.registry)
    }

    /// The training split plus its translations by `registry`.
    pub fn augmented(&self, registry: &Registry) -> Result<Vec<ImageSample>> {
        augment_with_translations(&self.split.train, registry, &self.gan_domains)
    }

    pub fn train_reid(&self, setup: &ExperimentSetup, seed: u64, loss: VerificationLoss, train: &[ImageSample]) -> Result<ReidTrainer> {
        let settings = ReidSettings { verification: loss, seed, ..setup.reid.clone() };
        let mut trainer = ReidTrainer::new(&setup.profile, train, settings)?;
        trainer.train(train)?;
        Ok(trainer)
    }

    /// Every evaluated camera direction of the protocol. `train` is checked
    /// for leakage under the cross-domain protocol.
    pub fn evaluate(&self, setup: &ExperimentSetup, backbone: &ReidBackbone, train: &[ImageSample]) -> Result<Vec<DirectionResult>> {
        let normalize = setup.reid.normalize_embeddings;
        match setup.protocol {
            Protocol::WithinDomain { .. } => {
                let curve = evaluate_split(backbone, &self.split.gallery, &self.split.probe, normalize, setup.max_rank)?;
                Ok(vec![DirectionResult { direction: direction(&self.policy), curve }])
            }
            Protocol::CrossDomain { .. } => {
                let r = cross_domain_eval(backbone, train, &self.domains, &self.policy, normalize, setup.max_rank)?;
                Ok(vec![
                    DirectionResult { direction: direction(&self.policy), curve: r.forward },
                    DirectionResult { direction: direction(&self.policy.swapped()), curve: r.backward },
                ])
            }
        }
    }

    fn run_cell(&self, setup: &ExperimentSetup, seed: u64, loss: VerificationLoss, train: &[ImageSample]) -> Result<Vec<DirectionResult>> {
        let mut runs = Vec::with_capacity(setup.reid_repeats);
        for r in 0..setup.reid_repeats {
            let trainer = self.train_reid(setup, restart_seed(seed, r), loss, train)?;
            runs.push(self.evaluate(setup, &trainer.backbone, train)?);
        }
        let first = runs.first().ok_or_else(|| Error::InvalidArgument("reid_repeats must be >= 1".into()))?;
        first
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let curves: Vec<CmcCurve> = runs.iter().map(|r| r[k].curve.clone()).collect();
                let curve = CmcCurve::mean(&curves).ok_or_else(|| Error::shape("run_cell", "restart curves differ in length"))?;
                Ok(DirectionResult { direction: d.direction.clone(), curve })
            })
            .collect()
    }
}

/// Seed of restart `r`; restart 0 uses the cell seed itself.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        Rng::derive(seed, "reid-restart", r as u64).next_u64()
    }
}

fn direction(p: &SplitPolicy) -> String {
    format!("cam{}->cam{}", p.probe_camera, p.gallery_camera)
}

/// Trains and evaluates every config for every seed. Each translation
/// variant is trained once per seed and shared by the rows that use it.
pub fn run_ablation(configs: &[AblationConfig], setup: &ExperimentSetup, seeds: &[u64]) -> Result<AblationReport> {
    run_ablation_with(configs, setup, seeds, |_| {})
}

/// As [`run_ablation`], reporting each finished cell.
pub fn run_ablation_with(
    configs: &[AblationConfig],
    setup: &ExperimentSetup,
    seeds: &[u64],
    mut on_cell: impl FnMut(&CellResult),
) -> Result<AblationReport> {
    if configs.is_empty() {
        return Err(Error::InvalidArgument("no ablation configs".into()));
    }
    if setup.reid_repeats == 0 {
        return Err(Error::InvalidArgument("reid_repeats must be >= 1".into()));
    }
    if seeds.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 seeds, got {}", seeds.len())));
    }
    let distinct: BTreeSet<u64> = seeds.iter().copied().collect();
    if distinct.len() != seeds.len() {
        return Err(Error::InvalidArgument("seeds must be distinct".into()));
    }
    let (Protocol::CrossDomain { held_out: d } | Protocol::WithinDomain { domain: d }) = setup.protocol;
    if d as usize >= setup.corpus.n_domains {
        return Err(Error::UnknownDomain(d as usize));
    }
    let mut cells = Vec::with_capacity(configs.len() * seeds.len());
    for &seed in seeds {
        let ctx = ExperimentData::generate(setup, seed)?;
        let mut augmented: BTreeMap<GanVariant, std::result::Result<Vec<ImageSample>, String>> = BTreeMap::new();
        for &config in configs {
            let train = augmented.entry(config.gan).or_insert_with(|| match config.gan.weights(setup.gan.weights) {
                None => Ok(ctx.split.train.clone()),
                Some(w) => ctx
                    .train_translator(setup, seed, w)
                    .and_then(|reg| ctx.augmented(&reg))
                    .map_err(|e| format!("translation training: {e}")),
            });
            let outcome = match train {
                Ok(train) => ctx.run_cell(setup, seed, config.loss, train).map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            let cell = CellResult { config, seed, outcome };
            on_cell(&cell);
            cells.push(cell);
        }
    }
    Ok(AblationReport { format_version: 1, setup: setup.clone(), seeds: seeds.to_vec(), cells })
}
