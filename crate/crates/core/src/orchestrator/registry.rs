use std::collections::BTreeMap;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{build_decoder, build_discriminator, build_encoder, Network, NetworkProfile};
use crate::rng::Rng;

/// Encoder, decoder and discriminator owned by one domain.
#[derive(Clone, Debug)]
pub struct DomainComponentSet {
    pub domain_id: usize,
    pub encoder: Network,
    pub decoder: Network,
    pub discriminator: Network,
}

impl DomainComponentSet {
    pub fn new(profile: &NetworkProfile, domain_id: usize, seed: u64) -> Result<Self> {
        let mut rng = Rng::derive(seed, "gan-init", domain_id as u64);
        Ok(Self {
            domain_id,
            encoder: build_encoder(profile, &mut rng)?,
            decoder: build_decoder(profile, &mut rng)?,
            discriminator: build_discriminator(profile, &mut rng)?,
        })
    }
}

/// All domains of one translation model. Any encoder can feed any decoder.
#[derive(Clone, Debug)]
pub struct Registry {
    profile: NetworkProfile,
    domains: Vec<DomainComponentSet>,
}

impl Registry {
    pub fn new(profile: NetworkProfile, n_domains: usize, seed: u64) -> Result<Self> {
        profile.validate()?;
        let domains = (0..n_domains)
            .map(|d| DomainComponentSet::new(&profile, d, seed))
            .collect::<Result<Vec<_>>>()?;
        Self::from_domains(profile, domains)
    }

    /// Checks that every encoder emits and every decoder accepts the same latent.
    pub fn from_domains(profile: NetworkProfile, domains: Vec<DomainComponentSet>) -> Result<Self> {
        let latent = profile.latent_shape()?;
        for (k, d) in domains.iter().enumerate() {
            if d.domain_id != k {
                return Err(Error::InvalidArgument(format!("domain at slot {k} has id {}", d.domain_id)));
            }
            if d.encoder.output_shape() != latent || d.decoder.input_shape() != latent {
                return Err(Error::shape(
                    "registry",
                    format!(
                        "domain {k}: encoder emits {:?}, decoder takes {:?}, shared latent is {latent:?}",
                        d.encoder.output_shape(),
                        d.decoder.input_shape()
                    ),
                ));
            }
            if d.encoder.input_shape() != profile.image_shape() || d.decoder.output_shape() != profile.image_shape() {
                return Err(Error::shape("registry", format!("domain {k} does not map images of the profile shape")));
            }
        }
        Ok(Self { profile, domains })
    }

    pub fn profile(&self) -> &NetworkProfile {
        &self.profile
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn domains(&self) -> &[DomainComponentSet] {
        &self.domains
    }

    pub fn domain(&self, id: usize) -> Result<&DomainComponentSet> {
        self.domains.get(id).ok_or(Error::UnknownDomain(id))
    }

    pub fn domain_mut(&mut self, id: usize) -> Result<&mut DomainComponentSet> {
        self.domains.get_mut(id).ok_or(Error::UnknownDomain(id))
    }

    /// `Dec_dst(Enc_src(x))` for one image (C, H, W) or a batch (N, C, H, W).
    pub fn translate(&self, x: &Tensor, src: usize, dst: usize) -> Result<Tensor> {
        if src == dst {
            self.domain(src)?;
            return Err(Error::SameDomain(src));
        }
        let enc = &self.domain(src)?.encoder;
        let dec = &self.domain(dst)?.decoder;
        let (batch, single) = as_batch(x)?;
        let z = enc.infer(&batch)?;
        unbatch(dec.infer(&z)?, single)
    }

    /// Translations of `x` into every other domain, sharing one encoder pass.
    pub fn translate_to_all(&self, x: &Tensor, src: usize) -> Result<BTreeMap<usize, Tensor>> {
        if self.domains.len() < 2 {
            return Err(Error::InvalidArgument("translation needs at least two domains".into()));
        }
        let enc = &self.domain(src)?.encoder;
        let (batch, single) = as_batch(x)?;
        let mut tape = Tape::new();
        let be = enc.bind(&mut tape, false);
        let xv = tape.constant(batch);
        let zv = enc.forward(&mut tape, &be, xv)?;
        let z = tape.value(zv).clone();
        let mut out = BTreeMap::new();
        for d in self.domains.iter().filter(|d| d.domain_id != src) {
            out.insert(d.domain_id, unbatch(d.decoder.infer(&z)?, single)?);
        }
        Ok(out)
    }
}

fn as_batch(x: &Tensor) -> Result<(Tensor, bool)> {
    match x.rank() {
        3 => {
            let mut shape = vec![1];
            shape.extend_from_slice(x.shape());
            Ok((x.clone().reshape(&shape)?, true))
        }
        4 => Ok((x.clone(), false)),
        _ => Err(Error::shape("translate", format!("expected (C, H, W) or (N, C, H, W), got {:?}", x.shape()))),
    }
}

fn unbatch(y: Tensor, single: bool) -> Result<Tensor> {
    if single {
        let shape = y.shape()[1..].to_vec();
        y.reshape(&shape)
    } else {
        Ok(y)
    }
}
