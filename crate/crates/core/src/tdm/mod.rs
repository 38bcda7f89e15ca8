//! Variational topic and discourse module.
//!
//! A conversation's topic bag of words is encoded into a Gaussian latent
//! `z`, mapped to a topic mixture `theta`; each turn's full bag of words is
//! encoded into a categorical discourse posterior `pi` from which a relaxed
//! one-hot `d` is drawn. Words are decoded from `softmax(f_phiT(theta) +
//! f_phiD(d))`, where topic logits cover only the topic vocabulary.

mod loss;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::SparseBow;
use crate::error::{Error, Result};
use crate::layers::{glorot_uniform, Binder, BoundLinear, Linear};
use crate::tensor::{softmax_rows, ParamKey, ParamStore, Real, Tape, Tensor, Var};

pub use loss::{discourse_kl_uniform, gaussian_kl, TdmLosses, TdmTerms};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdmConfig {
    pub topics: usize,
    pub discourse: usize,
    /// Width of the ReLU layer inside the topic encoder.
    pub encoder_hidden: usize,
    /// Weight of the mutual-information regularizer.
    pub lambda_mi: f64,
    /// Relaxation temperature at the start and end of pretraining.
    pub tau_start: f64,
    pub tau_end: f64,
}

impl Default for TdmConfig {
    fn default() -> Self {
        TdmConfig {
            topics: 10,
            discourse: 10,
            encoder_hidden: 100,
            lambda_mi: 0.01,
            tau_start: 1.0,
            tau_end: 0.3,
        }
    }
}

impl TdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 || self.discourse == 0 || self.encoder_hidden == 0 {
            return Err(Error::invalid("topics, discourse and encoder_hidden must be positive"));
        }
        if !(self.tau_start > 0.0 && self.tau_end > 0.0) {
            return Err(Error::invalid("temperatures must be positive"));
        }
        if !(self.lambda_mi >= 0.0) {
            return Err(Error::invalid("lambda_mi must be nonnegative"));
        }
        Ok(())
    }

    /// Linear anneal from `tau_start` to `tau_end` over `epochs` epochs.
    pub fn tau_at(&self, epoch: usize, epochs: usize) -> f64 {
        if epochs <= 1 {
            return self.tau_end;
        }
        if epoch + 1 >= epochs {
            return self.tau_end;
        }
        let frac = epoch as f64 / (epochs - 1) as f64;
        self.tau_start + (self.tau_end - self.tau_start) * frac
    }
}

/// Keys of every TDM table.
#[derive(Clone, Debug)]
pub struct Tdm {
    pub config: TdmConfig,
    pub vocab: usize,
    pub topic_vocab: usize,
    pub f_e: Linear,
    pub f_mu: Linear,
    pub f_sigma: Linear,
    pub f_pi: Linear,
    pub f_theta: Linear,
    /// Topic decoder weight, `[K x topic_vocab]`.
    pub phi_t: ParamKey,
    /// Discourse decoder weight, `[D x vocab]`.
    pub phi_d: ParamKey,
}

/// Standard normal noise for `z` and Gumbel noise for `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TdmNoise {
    pub eps: Vec<f64>,
    pub gumbel: Vec<f64>,
}

impl TdmNoise {
    pub fn zero(topics: usize, discourse: usize) -> Self {
        TdmNoise {
            eps: vec![0.0; topics],
            gumbel: vec![0.0; discourse],
        }
    }

    pub fn sample<R: Rng>(topics: usize, discourse: usize, rng: &mut R) -> Self {
        TdmNoise {
            eps: (0..topics).map(|_| StandardNormal.sample(rng)).collect(),
            gumbel: gumbel_noise(discourse, rng),
        }
    }
}

pub fn gumbel_noise<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Dense `[1 x dim]` row from sparse counts.
pub fn dense_bow<T: Real>(bow: &SparseBow, dim: usize) -> Result<Tensor<T>> {
    let mut v = vec![T::zero(); dim];
    for &(i, n) in bow {
        if i >= dim {
            return Err(Error::Shape {
                op: "dense_bow",
                lhs: vec![i],
                rhs: vec![dim],
            });
        }
        v[i] = T::lit(n as f64);
    }
    Ok(Tensor::row(v))
}

/// `softmax((log pi + g) / tau)` from unnormalized discourse logits, off the tape.
pub fn relaxed_discourse<T: Real>(logits: &[T], gumbel: &[f64], tau: f64) -> Vec<T> {
    let row = Tensor::row(logits.to_vec());
    let log_pi = crate::tensor::log_softmax_rows(&row);
    let scaled: Vec<T> = log_pi
        .data()
        .iter()
        .zip(gumbel)
        .map(|(&l, &g)| (l + T::lit(g)) / T::lit(tau))
        .collect();
    softmax_rows(&Tensor::row(scaled)).data().to_vec()
}

pub fn one_hot<T: Real>(index: usize, n: usize) -> Tensor<T> {
    let mut v = vec![T::zero(); n];
    v[index] = T::one();
    Tensor::row(v)
}

/// Indices of the `n` largest entries, ties broken by lower index.
pub fn top_words(row: &[f64], n: usize) -> Result<Vec<usize>> {
    if n > row.len() {
        return Err(Error::invalid(format!(
            "requested {n} words from a distribution over {}",
            row.len()
        )));
    }
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(n);
    Ok(idx)
}

impl Tdm {
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        config: &TdmConfig,
        vocab: usize,
        topic_vocab: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if topic_vocab == 0 || topic_vocab > vocab {
            return Err(Error::invalid(format!(
                "topic vocabulary {topic_vocab} must be within 1..={vocab}"
            )));
        }
        let (k, d, h) = (config.topics, config.discourse, config.encoder_hidden);
        let f_e = Linear::init(store, "tdm.f_e", topic_vocab, h, rng);
        let f_mu = Linear::init(store, "tdm.f_mu", h, k, rng);
        let f_sigma = Linear::init(store, "tdm.f_sigma", h, k, rng);
        let f_pi = Linear::init(store, "tdm.f_pi", vocab, d, rng);
        let f_theta = Linear::init(store, "tdm.f_theta", k, k, rng);
        let phi_t = store.add("tdm.phi_t", glorot_uniform(k, topic_vocab, rng));
        let phi_d = store.add("tdm.phi_d", glorot_uniform(d, vocab, rng));
        Ok(Tdm {
            config: config.clone(),
            vocab,
            topic_vocab,
            f_e,
            f_mu,
            f_sigma,
            f_pi,
            f_theta,
            phi_t,
            phi_d,
        })
    }

    pub fn bind<'t, T: Real>(&self, b: &Binder<'t, '_, T>) -> BoundTdm<'t, T> {
        BoundTdm {
            tape: b.tape(),
            topics: self.config.topics,
            discourse: self.config.discourse,
            vocab: self.vocab,
            topic_vocab: self.topic_vocab,
            f_e: self.f_e.bind(b),
            f_mu: self.f_mu.bind(b),
            f_sigma: self.f_sigma.bind(b),
            f_pi: self.f_pi.bind(b),
            f_theta: self.f_theta.bind(b),
            phi_t: b.get(self.phi_t),
            phi_d: b.get(self.phi_d),
        }
    }

    /// Topic-word distributions, `[K x topic_vocab]`.
    pub fn phi_topic<T: Real>(&self, store: &ParamStore<T>) -> Tensor<T> {
        softmax_rows(store.get(self.phi_t))
    }

    /// Discourse-word distributions, `[D x vocab]`.
    pub fn phi_discourse<T: Real>(&self, store: &ParamStore<T>) -> Tensor<T> {
        softmax_rows(store.get(self.phi_d))
    }

    /// Topic mean of a topic bag of words, computed off any training tape.
    pub fn topic_mean<T: Real>(&self, store: &ParamStore<T>, bow: &SparseBow) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let m = self.bind(&Binder::new(&tape, store, false));
        Ok(m.topic_mean(bow)?.value())
    }

    /// Discourse logits of a full bag of words, off any training tape.
    pub fn discourse_logits<T: Real>(
        &self,
        store: &ParamStore<T>,
        bow: &SparseBow,
    ) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let m = self.bind(&Binder::new(&tape, store, false));
        Ok(m.discourse_logits(bow)?.value())
    }
}

/// TDM tables bound onto one tape.
pub struct BoundTdm<'t, T: Real> {
    tape: &'t Tape<T>,
    pub topics: usize,
    pub discourse: usize,
    pub vocab: usize,
    pub topic_vocab: usize,
    f_e: BoundLinear<'t, T>,
    f_mu: BoundLinear<'t, T>,
    f_sigma: BoundLinear<'t, T>,
    f_pi: BoundLinear<'t, T>,
    f_theta: BoundLinear<'t, T>,
    phi_t: Var<'t, T>,
    phi_d: Var<'t, T>,
}

impl<'t, T: Real> BoundTdm<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    fn conv_input(&self, bow: &SparseBow) -> Result<Var<'t, T>> {
        Ok(self.tape.constant(dense_bow(bow, self.topic_vocab)?))
    }

    fn turn_input(&self, bow: &SparseBow) -> Result<Var<'t, T>> {
        Ok(self.tape.constant(dense_bow(bow, self.vocab)?))
    }

    /// `(mu, log sigma)` of a `[1 x topic_vocab]` bag of words.
    pub fn encode_topic(&self, c_bow: &Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let hidden = self.f_e.forward(c_bow)?.relu();
        Ok((self.f_mu.forward(&hidden)?, self.f_sigma.forward(&hidden)?))
    }

    pub fn topic_mean(&self, bow: &SparseBow) -> Result<Var<'t, T>> {
        Ok(self.encode_topic(&self.conv_input(bow)?)?.0)
    }

    /// Unnormalized discourse posterior, `pi = softmax(logits)`.
    pub fn discourse_logits_of(&self, t_bow: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.f_pi.forward(t_bow)
    }

    pub fn discourse_logits(&self, bow: &SparseBow) -> Result<Var<'t, T>> {
        self.discourse_logits_of(&self.turn_input(bow)?)
    }

    /// `(mu, log sigma, pi)`.
    pub fn encode(
        &self,
        c_bow: &Var<'t, T>,
        t_bow: &Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>, Var<'t, T>)> {
        let (mu, log_sigma) = self.encode_topic(c_bow)?;
        Ok((mu, log_sigma, self.discourse_logits_of(t_bow)?.softmax()))
    }

    pub fn topic_mixture(&self, z: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.f_theta.forward(z)?.softmax())
    }

    /// Logits over the full vocabulary from the topic part of the decoder;
    /// non-topic columns are zero.
    pub fn topic_logits_full(&self, theta: &Var<'t, T>) -> Result<Var<'t, T>> {
        let topic = theta.matmul(&self.phi_t)?;
        self.pad_topic(topic)
    }

    fn pad_topic(&self, topic: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.vocab == self.topic_vocab {
            return Ok(topic);
        }
        let zeros = self
            .tape
            .constant(Tensor::zeros(&[1, self.vocab - self.topic_vocab]));
        self.tape.concat_cols(&[topic, zeros])
    }

    /// Word log-probabilities `log beta` for mixture `theta` and discourse `d`.
    pub fn decode_log(&self, theta: &Var<'t, T>, d: &Var<'t, T>) -> Result<Var<'t, T>> {
        let logits = self.topic_logits_full(theta)?.add(&d.matmul(&self.phi_d)?)?;
        Ok(logits.log_softmax())
    }

    pub fn decode(&self, theta: &Var<'t, T>, d: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.decode_log(theta, d)?.exp())
    }

    /// Log-probabilities over the topic vocabulary from `theta` alone.
    pub fn topic_reconstruction_log(&self, theta: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(theta.matmul(&self.phi_t)?.log_softmax())
    }

    /// Log-probabilities over the full vocabulary from `d` alone.
    pub fn discourse_reconstruction_log(&self, d: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(d.matmul(&self.phi_d)?.log_softmax())
    }

    /// Discourse posterior implied by the topic-only reconstruction of a
    /// turn of `turn_len` words; returns logits.
    pub fn discourse_given_topic(&self, theta: &Var<'t, T>, turn_len: f64) -> Result<Var<'t, T>> {
        let expected = theta
            .matmul(&self.phi_t)?
            .softmax()
            .scale(T::lit(turn_len));
        self.f_pi.forward(&self.pad_topic(expected)?)
    }

    /// Mean of `mu` over the given conversations; `None` for an empty list.
    pub fn user_topic_embedding(&self, history: &[&SparseBow]) -> Result<Option<Var<'t, T>>> {
        if history.is_empty() {
            return Ok(None);
        }
        let mus = history
            .iter()
            .map(|b| self.topic_mean(b))
            .collect::<Result<Vec<_>>>()?;
        if mus.len() == 1 {
            return Ok(Some(mus[0]));
        }
        Ok(Some(self.tape.concat_rows(&mus)?.mean_rows()))
    }
}

/// `z = mu + exp(log sigma) * eps`.
pub fn sample_topic<'t, T: Real>(
    mu: &Var<'t, T>,
    log_sigma: &Var<'t, T>,
    eps: &[f64],
) -> Result<Var<'t, T>> {
    let shape = mu.shape();
    let noise = Tensor::new(shape, eps.iter().map(|&e| T::lit(e)).collect())?;
    let noise = mu.tape().constant(noise);
    mu.add(&log_sigma.exp().mul(&noise)?)
}

/// Relaxed draw `softmax((log pi + g) / tau)` from discourse logits, or the
/// one-hot argmax when `hard` is set.
pub fn sample_discourse<'t, T: Real>(
    logits: &Var<'t, T>,
    gumbel: &[f64],
    tau: f64,
    hard: bool,
) -> Result<Var<'t, T>> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let shape = logits.shape();
    let n = shape.iter().product();
    if hard {
        return Ok(logits.tape().constant(one_hot(logits.value().argmax(), n).reshape(shape)?));
    }
    if gumbel.len() != n {
        return Err(Error::Shape {
            op: "sample_discourse",
            lhs: shape,
            rhs: vec![gumbel.len()],
        });
    }
    let g = Tensor::new(shape, gumbel.iter().map(|&x| T::lit(x)).collect())?;
    let g = logits.tape().constant(g);
    Ok(logits
        .log_softmax()
        .add(&g)?
        .scale(T::lit(1.0 / tau))
        .softmax())
}
