use super::trainer::discriminator_step;
use super::*;
use crate::autodiff::{Tape, Tensor};
use crate::gan::{scimgan_objective_value, IdentityVariant};
use crate::nn::NetworkProfile;
use crate::rng::Rng;

fn image(rng: &mut Rng, n: usize) -> Tensor {
    Tensor::new(vec![n, 3, 16, 16], (0..n * 768).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

fn domain_images(seed: u64, domains: usize, per: usize) -> Vec<Vec<Tensor>> {
    let mut rng = Rng::new(seed);
    (0..domains)
        .map(|d| {
            (0..per)
                .map(|_| {
                    let data = (0..768).map(|_| (0.3 * d as f64 - 0.3 + 0.2 * rng.normal()).clamp(-1.0, 1.0)).collect();
                    Tensor::new(vec![3, 16, 16], data).unwrap()
                })
                .collect()
        })
        .collect()
}

fn params_of(net: &crate::nn::Network) -> Vec<Tensor> {
    net.params().iter().map(|p| p.value.clone()).collect()
}

#[test]
fn translate_is_deterministic_and_shape_preserving() {
    let reg = Registry::new(NetworkProfile::desk(), 3, 1).unwrap();
    let x = image(&mut Rng::new(2), 1);
    let a = reg.translate(&x, 0, 2).unwrap();
    let b = reg.translate(&x, 0, 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[1, 3, 16, 16]);
    let single = x.clone().reshape(&[3, 16, 16]).unwrap();
    assert_eq!(reg.translate(&single, 0, 2).unwrap().data(), a.data());
    assert!(matches!(reg.translate(&x, 1, 1), Err(crate::Error::SameDomain(1))));
    assert!(matches!(reg.translate(&x, 0, 7), Err(crate::Error::UnknownDomain(7))));
}

#[test]
fn latent_gap_matches_recomposition() {
    let reg = Registry::new(NetworkProfile::desk(), 2, 3).unwrap();
    let x = image(&mut Rng::new(4), 2);
    let fake = reg.translate(&x, 0, 1).unwrap();
    let z_back = reg.domain(1).unwrap().encoder.infer(&fake).unwrap();
    let z_src = reg.domain(0).unwrap().encoder.infer(&x).unwrap();
    let gap: f64 = z_back.data().iter().zip(z_src.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / z_src.len() as f64;

    let mut t = Tape::new();
    let (e0, d1, e1) = (&reg.domain(0).unwrap().encoder, &reg.domain(1).unwrap().decoder, &reg.domain(1).unwrap().encoder);
    let (b0, bd, b1) = (e0.bind(&mut t, false), d1.bind(&mut t, false), e1.bind(&mut t, false));
    let xv = t.constant(x);
    let z = e0.forward(&mut t, &b0, xv).unwrap();
    let f = d1.forward(&mut t, &bd, z).unwrap();
    let zb = e1.forward(&mut t, &b1, f).unwrap();
    let l = crate::gan::mean_l1(&mut t, zb, z).unwrap();
    assert!((t.scalar(l) - gap).abs() < 1e-12);
    assert!(gap > 0.0);
}

#[test]
fn translate_to_all_reuses_the_latent() {
    let reg = Registry::new(NetworkProfile::desk(), 4, 5).unwrap();
    let x = image(&mut Rng::new(6), 1);
    let before = reg.domain(2).unwrap().encoder.forward_calls();
    let all = reg.translate_to_all(&x, 2).unwrap();
    assert_eq!(reg.domain(2).unwrap().encoder.forward_calls() - before, 1);
    assert_eq!(all.keys().copied().collect::<Vec<_>>(), vec![0, 1, 3]);
    for (&dst, y) in &all {
        assert_eq!(y, &reg.translate(&x, 2, dst).unwrap());
    }
    let lonely = Registry::new(NetworkProfile::desk(), 1, 5).unwrap();
    assert!(lonely.translate_to_all(&x, 0).is_err());
}

fn fresh(seed: u64, domains: usize) -> GanTrainer {
    let reg = Registry::new(NetworkProfile::desk(), domains, seed).unwrap();
    GanTrainer::new(reg, GanSettings::desk(seed)).unwrap()
}

#[test]
fn reported_total_recomposes() {
    let mut tr = fresh(7, 2);
    let data = domain_images(7, 2, 8);
    for _ in 0..3 {
        let r = tr.step(&data).unwrap().unwrap();
        let w = tr.settings().weights;
        let again = scimgan_objective_value(r.adv_fwd, r.adv_bwd, r.cyc, r.idm, r.sem, &w);
        assert!((r.total - again).abs() <= 1e-12);
        assert_eq!(r.g_loss, r.adv_fwd + r.adv_bwd);
    }
}

#[test]
fn identical_state_gives_identical_parameters() {
    let data = domain_images(8, 2, 8);
    let mut a = fresh(8, 2);
    let mut b = fresh(8, 2);
    a.steps(&data, 2).unwrap();
    b.steps(&data, 2).unwrap();
    for (da, db) in a.registry.domains().iter().zip(b.registry.domains()) {
        assert_eq!(da.encoder.params(), db.encoder.params());
        assert_eq!(da.decoder.params(), db.decoder.params());
        assert_eq!(da.discriminator.params(), db.discriminator.params());
    }
}

#[test]
fn updates_touch_only_their_own_networks() {
    let data = domain_images(9, 3, 4);
    let mut tr = fresh(9, 3);
    let snap = |tr: &GanTrainer, d: usize| {
        let c = tr.registry.domain(d).unwrap();
        (params_of(&c.encoder), params_of(&c.decoder), params_of(&c.discriminator))
    };
    let before: Vec<_> = (0..3).map(|d| snap(&tr, d)).collect();

    // Discriminator step alone leaves every encoder and decoder untouched.
    let mut reg = tr.registry.clone();
    let mut opt = tr.optimizers.clone();
    let x = Tensor::stack(&data[0].iter().collect::<Vec<_>>()).unwrap();
    let y = Tensor::stack(&data[1].iter().collect::<Vec<_>>()).unwrap();
    discriminator_step(&mut reg, &mut opt, (0, 1), (&x, &y), (&y, &x), 0.0002).unwrap();
    for d in 0..3 {
        let c = reg.domain(d).unwrap();
        assert_eq!(params_of(&c.encoder), before[d].0);
        assert_eq!(params_of(&c.decoder), before[d].1);
    }
    assert_ne!(params_of(&reg.domain(0).unwrap().discriminator), before[0].2);

    // A pair step changes pair (0, 1) only; the generator half never moves a discriminator
    // beyond what the discriminator half did.
    tr.step(&data).unwrap();
    let after: Vec<_> = (0..3).map(|d| snap(&tr, d)).collect();
    assert_eq!(after[2], before[2]);
    for d in 0..2 {
        assert_ne!(after[d].0, before[d].0);
        assert_ne!(after[d].1, before[d].1);
        assert_ne!(after[d].2, before[d].2);
    }
}

#[test]
fn discriminator_after_pair_step_equals_standalone_discriminator_step() {
    let data = domain_images(10, 2, 4);
    let mut tr = fresh(10, 2);
    let mut reg = tr.registry.clone();
    let mut opt = tr.optimizers.clone();
    // Reproduce the step's batches: one batch per pair with this corpus size.
    let mut rng = Rng::derive(10, "gan-batches", 0);
    let mut a: Vec<usize> = (0..4).collect();
    let mut b: Vec<usize> = (0..4).collect();
    rng.shuffle(&mut a);
    rng.shuffle(&mut b);
    let x = Tensor::stack(&a.iter().map(|&k| &data[0][k]).collect::<Vec<_>>()).unwrap();
    let y = Tensor::stack(&b.iter().map(|&k| &data[1][k]).collect::<Vec<_>>()).unwrap();
    let fake_i = reg.translate(&y, 1, 0).unwrap();
    let fake_j = reg.translate(&x, 0, 1).unwrap();
    discriminator_step(&mut reg, &mut opt, (0, 1), (&x, &y), (&fake_i, &fake_j), 0.0002).unwrap();
    tr.step(&data).unwrap();
    for d in 0..2 {
        assert_eq!(
            params_of(&tr.registry.domain(d).unwrap().discriminator),
            params_of(&reg.domain(d).unwrap().discriminator)
        );
    }
}

#[test]
fn epoch_visits_every_pair_once() {
    let data = domain_images(11, 3, 4);
    let mut tr = fresh(11, 3);
    tr.state.settings.lr = LrSchedule::new(0.0002, 1, 2).unwrap();
    tr.train_all(&data, |_| Ok(())).unwrap();
    assert_eq!(tr.history().len(), 3);
    for e in tr.history() {
        let pairs: Vec<_> = e.pairs.iter().map(|p| p.pair).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
        assert!(e.pairs.iter().all(|p| p.steps == 1));
    }
    let lrs: Vec<f64> = tr.history().iter().map(|e| e.lr).collect();
    assert_eq!(lrs, vec![0.0002, 0.0002, 0.0001]);
    assert!(tr.step(&data).unwrap().is_none());
    let csv = tr.history_csv();
    assert_eq!(csv.lines().count(), 1 + 9);
    assert!(csv.starts_with("epoch,pair,d_loss,g_loss,cyc,idm,sem,total"));
}

#[test]
fn same_domain_identity_variant_runs() {
    let data = domain_images(12, 2, 4);
    let mut tr = fresh(12, 2);
    tr.state.settings.identity_variant = IdentityVariant::SameDomain;
    let r = tr.step(&data).unwrap().unwrap();
    assert!(r.idm > 0.0 && r.idm.is_finite());
}

#[test]
fn empty_or_missing_domain_data_is_rejected() {
    let mut tr = fresh(13, 3);
    let mut data = domain_images(13, 3, 4);
    data[1].clear();
    assert!(tr.step(&data).is_err());
    data.pop();
    assert!(tr.step(&data).is_err());
}
