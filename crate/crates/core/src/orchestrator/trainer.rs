use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::registry::Registry;
use super::schedule::{LrSchedule, PairSchedule};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gan::{
    cycle_loss, discriminator_loss, generator_loss, identity_mapping_loss, mean_l1, scimgan_objective,
    semantic_consistency_loss, AdversarialForm, IdentityVariant, LossWeights, TranslationBundle,
};
use crate::nn::{Bound, Network};
use crate::optim::AdamState;
use crate::rng::Rng;

/// Hyperparameters of translation training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanSettings {
    pub weights: LossWeights,
    pub form: AdversarialForm,
    pub identity_variant: IdentityVariant,
    pub lr: LrSchedule,
    pub batch: usize,
    pub shuffle_pairs: bool,
    pub seed: u64,
}

impl GanSettings {
    pub fn desk(seed: u64) -> Self {
        Self {
            weights: LossWeights::default(),
            form: AdversarialForm::NonSaturating,
            identity_variant: IdentityVariant::Literal,
            lr: LrSchedule { base_lr: 0.0002, constant_epochs: 10, decay_epochs: 10 },
            batch: 4,
            shuffle_pairs: false,
            seed,
        }
    }
}

/// Component losses of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub d_loss: f64,
    pub g_loss: f64,
    pub adv_fwd: f64,
    pub adv_bwd: f64,
    pub cyc: f64,
    pub idm: f64,
    pub sem: f64,
    pub total: f64,
}

impl LossReport {
    fn add(&mut self, o: &LossReport) {
        self.d_loss += o.d_loss;
        self.g_loss += o.g_loss;
        self.adv_fwd += o.adv_fwd;
        self.adv_bwd += o.adv_bwd;
        self.cyc += o.cyc;
        self.idm += o.idm;
        self.sem += o.sem;
        self.total += o.total;
    }

    fn scaled(&self, s: f64) -> LossReport {
        LossReport {
            d_loss: self.d_loss * s,
            g_loss: self.g_loss * s,
            adv_fwd: self.adv_fwd * s,
            adv_bwd: self.adv_bwd * s,
            cyc: self.cyc * s,
            idm: self.idm * s,
            sem: self.sem * s,
            total: self.total * s,
        }
    }
}

/// Mean losses of one pair over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub epoch: usize,
    pub pair: (usize, usize),
    pub steps: usize,
    pub mean: LossReport,
}

/// Mean losses of one epoch over all its pair steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub mean: LossReport,
    pub pairs: Vec<PairRecord>,
}

/// Position inside the training loop, enough to resume exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub epoch: usize,
    pub pair_index: usize,
    pub batch_index: usize,
}

/// Adam states of one domain's three networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainOptimizers {
    pub encoder: AdamState,
    pub decoder: AdamState,
    pub discriminator: AdamState,
}

/// Losses accumulated inside the epoch the cursor points into.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Partial {
    pub pairs: Vec<PairRecord>,
    pub current: LossReport,
    pub current_steps: usize,
}

/// Serializable trainer state apart from network parameters and moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub settings: GanSettings,
    pub cursor: Cursor,
    pub history: Vec<EpochRecord>,
    pub partial: Partial,
}

/// Runs pairwise translation training over a registry.
#[derive(Clone, Debug)]
pub struct GanTrainer {
    pub registry: Registry,
    pub optimizers: Vec<DomainOptimizers>,
    pub state: TrainerState,
}

fn images_batch(images: &[Tensor], idx: &[usize]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = idx.iter().map(|&k| &images[k]).collect();
    Tensor::stack(&refs)
}

fn trained(tape: &mut Tape, net: &Network) -> Bound {
    net.bind(tape, true)
}

/// Discriminator update for both domains of a pair; returns the summed loss.
pub(crate) fn discriminator_step(
    registry: &mut Registry,
    optimizers: &mut [DomainOptimizers],
    pair: (usize, usize),
    real: (&Tensor, &Tensor),
    fake: (&Tensor, &Tensor),
    lr: f64,
) -> Result<f64> {
    let (i, j) = pair;
    let mut tape = Tape::new();
    let di = &registry.domain(i)?.discriminator;
    let dj = &registry.domain(j)?.discriminator;
    let (bi, bj) = (trained(&mut tape, di), trained(&mut tape, dj));
    let xi = tape.constant(real.0.clone());
    let xj = tape.constant(real.1.clone());
    let fi = tape.constant(fake.0.clone());
    let fj = tape.constant(fake.1.clone());
    let si_real = di.forward(&mut tape, &bi, xi)?;
    let si_fake = di.forward(&mut tape, &bi, fi)?;
    let sj_real = dj.forward(&mut tape, &bj, xj)?;
    let sj_fake = dj.forward(&mut tape, &bj, fj)?;
    let li = discriminator_loss(&mut tape, si_real, si_fake)?;
    let lj = discriminator_loss(&mut tape, sj_real, sj_fake)?;
    let total = tape.add(li, lj)?;
    tape.backward(total)?;
    let gi = di.grads(&tape, &bi);
    let gj = dj.grads(&tape, &bj);
    let value = tape.scalar(total);
    optimizers[i].discriminator.step(registry.domain_mut(i)?.discriminator.params_mut(), &gi, lr)?;
    optimizers[j].discriminator.step(registry.domain_mut(j)?.discriminator.params_mut(), &gj, lr)?;
    Ok(value)
}

/// One alternating update of the pair `(i, j)`: both discriminators on
/// detached fakes, then both encoders and decoders on the weighted objective
/// with the updated discriminators frozen.
pub fn train_pair_step(
    registry: &mut Registry,
    optimizers: &mut [DomainOptimizers],
    pair: (usize, usize),
    batch_i: &Tensor,
    batch_j: &Tensor,
    settings: &GanSettings,
    lr: f64,
) -> Result<LossReport> {
    let (i, j) = pair;
    if i == j {
        return Err(Error::SameDomain(i));
    }
    if optimizers.len() != registry.n_domains() {
        return Err(Error::InvalidArgument("one optimizer set per domain is required".into()));
    }
    let latent = registry.profile().latent_shape()?;
    for d in [i, j] {
        let c = registry.domain(d)?;
        if c.encoder.output_shape() != latent || c.decoder.input_shape() != latent {
            return Err(Error::shape("train_pair_step", format!("domain {d} disagrees on the latent shape")));
        }
    }

    let mut tape = Tape::new();
    let (ci, cj) = (registry.domain(i)?, registry.domain(j)?);
    let be_i = trained(&mut tape, &ci.encoder);
    let bd_i = trained(&mut tape, &ci.decoder);
    let be_j = trained(&mut tape, &cj.encoder);
    let bd_j = trained(&mut tape, &cj.decoder);
    let xi = tape.constant(batch_i.clone());
    let xj = tape.constant(batch_j.clone());

    let bundle = |tape: &mut Tape, x: Var, s: (&Network, &Bound, &Network, &Bound), d: (&Network, &Bound, &Network, &Bound), src, dst| -> Result<TranslationBundle> {
        let z_src = s.0.forward(tape, s.1, x)?;
        let x_fake = d.2.forward(tape, d.3, z_src)?;
        let z_back = d.0.forward(tape, d.1, x_fake)?;
        let x_rec = s.2.forward(tape, s.3, z_back)?;
        Ok(TranslationBundle { x_src: x, z_src, x_fake, z_back, x_rec, src, dst })
    };
    let side_i = (&ci.encoder, &be_i, &ci.decoder, &bd_i);
    let side_j = (&cj.encoder, &be_j, &cj.decoder, &bd_j);
    let fwd = bundle(&mut tape, xi, side_i, side_j, i, j)?;
    let bwd = bundle(&mut tape, xj, side_j, side_i, j, i)?;

    // fwd.x_fake lives in domain j, bwd.x_fake in domain i.
    let fake_i = tape.value(bwd.x_fake).clone();
    let fake_j = tape.value(fwd.x_fake).clone();
    let d_loss = discriminator_step(registry, optimizers, pair, (batch_i, batch_j), (&fake_i, &fake_j), lr)?;

    let (ci, cj) = (registry.domain(i)?, registry.domain(j)?);
    let bs_i = ci.discriminator.bind(&mut tape, false);
    let bs_j = cj.discriminator.bind(&mut tape, false);
    let s_fwd = cj.discriminator.forward(&mut tape, &bs_j, fwd.x_fake)?;
    let s_bwd = ci.discriminator.forward(&mut tape, &bs_i, bwd.x_fake)?;
    let adv_fwd = generator_loss(&mut tape, s_fwd, settings.form)?;
    let adv_bwd = generator_loss(&mut tape, s_bwd, settings.form)?;
    let cyc = cycle_loss(&mut tape, &fwd, &bwd)?;
    let idm = match settings.identity_variant {
        IdentityVariant::Literal => identity_mapping_loss(&mut tape, xi, fwd.x_fake, xj, bwd.x_fake)?,
        IdentityVariant::SameDomain => {
            let self_i = ci.decoder.forward(&mut tape, &bd_i, fwd.z_src)?;
            let self_j = cj.decoder.forward(&mut tape, &bd_j, bwd.z_src)?;
            let a = mean_l1(&mut tape, self_i, xi)?;
            let b = mean_l1(&mut tape, self_j, xj)?;
            tape.add(a, b)?
        }
    };
    let sem = semantic_consistency_loss(&mut tape, fwd.z_src, fwd.z_back, bwd.z_src, bwd.z_back)?;
    let total = scimgan_objective(&mut tape, adv_fwd, adv_bwd, cyc, idm, sem, &settings.weights)?;
    tape.backward(total)?;

    let grads = [
        ci.encoder.grads(&tape, &be_i),
        ci.decoder.grads(&tape, &bd_i),
        cj.encoder.grads(&tape, &be_j),
        cj.decoder.grads(&tape, &bd_j),
    ];
    let report = LossReport {
        d_loss,
        g_loss: tape.scalar(adv_fwd) + tape.scalar(adv_bwd),
        adv_fwd: tape.scalar(adv_fwd),
        adv_bwd: tape.scalar(adv_bwd),
        cyc: tape.scalar(cyc),
        idm: tape.scalar(idm),
        sem: tape.scalar(sem),
        total: tape.scalar(total),
    };
    if !report.total.is_finite() || !report.d_loss.is_finite() {
        return Err(Error::NonFinite { op: "train_pair_step" });
    }
    drop(tape);
    let [ge_i, gd_i, ge_j, gd_j] = grads;
    optimizers[i].encoder.step(registry.domain_mut(i)?.encoder.params_mut(), &ge_i, lr)?;
    optimizers[i].decoder.step(registry.domain_mut(i)?.decoder.params_mut(), &gd_i, lr)?;
    optimizers[j].encoder.step(registry.domain_mut(j)?.encoder.params_mut(), &ge_j, lr)?;
    optimizers[j].decoder.step(registry.domain_mut(j)?.decoder.params_mut(), &gd_j, lr)?;
    Ok(report)
}

impl GanTrainer {
    pub fn new(registry: Registry, settings: GanSettings) -> Result<Self> {
        if settings.batch == 0 {
            return Err(Error::InvalidArgument("batch must be >= 1".into()));
        }
        settings.weights.validate()?;
        let optimizers = registry
            .domains()
            .iter()
            .map(|d| DomainOptimizers {
                encoder: AdamState::new(d.encoder.params()),
                decoder: AdamState::new(d.decoder.params()),
                discriminator: AdamState::new(d.discriminator.params()),
            })
            .collect();
        Ok(Self {
            registry,
            optimizers,
            state: TrainerState { settings, cursor: Cursor::default(), history: Vec::new(), partial: Partial::default() },
        })
    }

    pub fn settings(&self) -> &GanSettings {
        &self.state.settings
    }

    pub fn cursor(&self) -> Cursor {
        self.state.cursor
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.state.history
    }

    pub fn schedule(&self, epoch: usize) -> Result<PairSchedule> {
        let n = self.registry.n_domains();
        if self.state.settings.shuffle_pairs {
            PairSchedule::shuffled(n, self.state.settings.seed, epoch)
        } else {
            PairSchedule::lexicographic(n)
        }
    }

    fn check_data(&self, data: &[Vec<Tensor>]) -> Result<()> {
        if data.len() != self.registry.n_domains() {
            return Err(Error::Dataset(format!(
                "{} image sets for {} registered domains",
                data.len(),
                self.registry.n_domains()
            )));
        }
        for (d, images) in data.iter().enumerate() {
            if images.len() < self.state.settings.batch {
                return Err(Error::Dataset(format!(
                    "domain {d} has {} images, fewer than one batch of {}",
                    images.len(),
                    self.state.settings.batch
                )));
            }
        }
        Ok(())
    }

    fn batches_per_pair(&self, data: &[Vec<Tensor>], pair: (usize, usize)) -> usize {
        data[pair.0].len().min(data[pair.1].len()) / self.state.settings.batch
    }

    /// Sample order of both domains for one pair visit, derived from the seed
    /// and position alone.
    fn orders(&self, data: &[Vec<Tensor>], epoch: usize, pair_index: usize, pair: (usize, usize)) -> (Vec<usize>, Vec<usize>) {
        let n_pairs = self.registry.n_domains() * (self.registry.n_domains() - 1) / 2;
        let mut rng = Rng::derive(self.state.settings.seed, "gan-batches", (epoch * n_pairs + pair_index) as u64);
        let mut a: Vec<usize> = (0..data[pair.0].len()).collect();
        let mut b: Vec<usize> = (0..data[pair.1].len()).collect();
        rng.shuffle(&mut a);
        rng.shuffle(&mut b);
        (a, b)
    }

    /// Runs one pair step at the cursor and advances it. Returns `None` when
    /// the cursor is already past the last scheduled epoch.
    pub fn step(&mut self, data: &[Vec<Tensor>]) -> Result<Option<LossReport>> {
        self.check_data(data)?;
        let c = self.state.cursor;
        if c.epoch >= self.state.settings.lr.total_epochs() {
            return Ok(None);
        }
        let schedule = self.schedule(c.epoch)?;
        let pair = schedule.pairs()[c.pair_index];
        let (oa, ob) = self.orders(data, c.epoch, c.pair_index, pair);
        let bsz = self.state.settings.batch;
        let sel = |o: &[usize]| o[c.batch_index * bsz..(c.batch_index + 1) * bsz].to_vec();
        let bi = images_batch(&data[pair.0], &sel(&oa))?;
        let bj = images_batch(&data[pair.1], &sel(&ob))?;
        let lr = self.state.settings.lr.lr(c.epoch);
        let settings = self.state.settings.clone();
        let report = train_pair_step(&mut self.registry, &mut self.optimizers, pair, &bi, &bj, &settings, lr)?;

        let p = &mut self.state.partial;
        p.current.add(&report);
        p.current_steps += 1;
        let mut next = c;
        next.batch_index += 1;
        if next.batch_index == self.batches_per_pair(data, pair) {
            let p = &mut self.state.partial;
            p.pairs.push(PairRecord {
                epoch: c.epoch,
                pair,
                steps: p.current_steps,
                mean: p.current.scaled(1.0 / p.current_steps as f64),
            });
            p.current = LossReport::default();
            p.current_steps = 0;
            next.batch_index = 0;
            next.pair_index += 1;
            if next.pair_index == schedule.len() {
                let pairs = std::mem::take(&mut p.pairs);
                let steps: usize = pairs.iter().map(|r| r.steps).sum();
                let mut sum = LossReport::default();
                for r in &pairs {
                    sum.add(&r.mean.scaled(r.steps as f64));
                }
                self.state.history.push(EpochRecord {
                    epoch: c.epoch,
                    lr,
                    steps,
                    mean: sum.scaled(1.0 / steps as f64),
                    pairs,
                });
                next.pair_index = 0;
                next.epoch += 1;
            }
        }
        self.state.cursor = next;
        Ok(Some(report))
    }

    /// Runs up to `n` steps; returns how many ran.
    pub fn steps(&mut self, data: &[Vec<Tensor>], n: usize) -> Result<usize> {
        for k in 0..n {
            if self.step(data)?.is_none() {
                return Ok(k);
            }
        }
        Ok(n)
    }

    /// Finishes the epoch the cursor is in.
    pub fn train_epoch(&mut self, data: &[Vec<Tensor>]) -> Result<Option<&EpochRecord>> {
        let epoch = self.state.cursor.epoch;
        while self.state.cursor.epoch == epoch {
            if self.step(data)?.is_none() {
                return Ok(None);
            }
        }
        Ok(self.state.history.last())
    }

    /// Trains to the end of the schedule, calling `after_epoch` after each.
    pub fn train_all(
        &mut self,
        data: &[Vec<Tensor>],
        mut after_epoch: impl FnMut(&GanTrainer) -> Result<()>,
    ) -> Result<&[EpochRecord]> {
        while self.train_epoch(data)?.is_some() {
            after_epoch(self)?;
        }
        Ok(&self.state.history)
    }

    /// Loss history as CSV, one row per epoch and pair.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,pair,d_loss,g_loss,cyc,idm,sem,total\n");
        for e in &self.state.history {
            for r in &e.pairs {
                let m = &r.mean;
                let _ = writeln!(
                    s,
                    "{},{}-{},{},{},{},{},{},{}",
                    r.epoch, r.pair.0, r.pair.1, m.d_loss, m.g_loss, m.cyc, m.idm, m.sem, m.total
                );
            }
        }
        s
    }
}
