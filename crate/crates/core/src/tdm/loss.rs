use serde::{Deserialize, Serialize};

use super::{dense_bow, sample_discourse, sample_topic, BoundTdm, TdmNoise};
use crate::corpus::SparseBow;
use crate::error::Result;
use crate::tensor::{Real, Var};

/// `KL(N(mu, sigma^2) || N(0, I)) = 0.5 sum(mu^2 + sigma^2 - 1 - 2 log sigma)`.
pub fn gaussian_kl<'t, T: Real>(mu: &Var<'t, T>, log_sigma: &Var<'t, T>) -> Result<Var<'t, T>> {
    let var = log_sigma.scale(T::lit(2.0)).exp();
    let inner = mu
        .mul(mu)?
        .add(&var)?
        .sub(&log_sigma.scale(T::lit(2.0)))?
        .add_scalar(-T::one());
    Ok(inner.sum().scale(T::lit(0.5)))
}

/// `KL(softmax(logits) || Uniform(D)) = sum pi log pi + log D`.
pub fn discourse_kl_uniform<'t, T: Real>(logits: &Var<'t, T>) -> Result<Var<'t, T>> {
    let n = logits.shape().iter().product::<usize>() as f64;
    Ok(logits
        .softmax()
        .dot(&logits.log_softmax())?
        .add_scalar(T::lit(n.ln())))
}

/// Per-item loss terms, all to be minimized.
pub struct TdmTerms<'t, T> {
    /// Conversation reconstruction over the topic vocabulary plus Gaussian KL.
    pub l_z: Var<'t, T>,
    /// Turn reconstruction from discourse alone plus KL to the uniform prior.
    pub l_d: Var<'t, T>,
    /// Target-turn negative log-likelihood under the joint decoder.
    pub l_t: Var<'t, T>,
    /// Divergence of the topic-implied discourse posterior from uniform.
    pub l_mi: Var<'t, T>,
    pub total: Var<'t, T>,
    pub d: Var<'t, T>,
}

impl<'t, T: Real> BoundTdm<'t, T> {
    /// Loss for one `(conversation, target turn)` pair. `conv_bow` is a
    /// topic-view bag of words, `turn_bow` a full-view one.
    pub fn item_loss(
        &self,
        conv_bow: &SparseBow,
        turn_bow: &SparseBow,
        noise: &TdmNoise,
        tau: f64,
        lambda: f64,
    ) -> Result<TdmTerms<'t, T>> {
        let tape = self.tape();
        let c = tape.constant(dense_bow(conv_bow, self.topic_vocab)?);
        let t = tape.constant(dense_bow(turn_bow, self.vocab)?);
        let turn_len: f64 = turn_bow.iter().map(|&(_, n)| n as f64).sum();

        let (mu, log_sigma) = self.encode_topic(&c)?;
        let z = sample_topic(&mu, &log_sigma, &noise.eps)?;
        let theta = self.topic_mixture(&z)?;
        let rec_c = self.topic_reconstruction_log(&theta)?.dot(&c)?.neg();
        let l_z = rec_c.add(&gaussian_kl(&mu, &log_sigma)?)?;

        let pi_logits = self.discourse_logits_of(&t)?;
        let d = sample_discourse(&pi_logits, &noise.gumbel, tau, false)?;
        let rec_d = self.discourse_reconstruction_log(&d)?.dot(&t)?.neg();
        let l_d = rec_d.add(&discourse_kl_uniform(&pi_logits)?)?;

        let l_t = self.decode_log(&theta, &d)?.dot(&t)?.neg();

        let l_mi = discourse_kl_uniform(&self.discourse_given_topic(&theta, turn_len)?)?;

        let total = l_z.add(&l_d)?.add(&l_t)?.add(&l_mi.scale(T::lit(lambda)))?;
        Ok(TdmTerms {
            l_z,
            l_d,
            l_t,
            l_mi,
            total,
            d,
        })
    }
}

/// Running sums of TDM loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TdmLosses {
    pub l_z: f64,
    pub l_d: f64,
    pub l_t: f64,
    pub l_mi: f64,
    pub total: f64,
    pub count: usize,
}

impl TdmLosses {
    pub fn add<T: Real>(&mut self, terms: &TdmTerms<'_, T>) {
        self.l_z += terms.l_z.item().as_f64();
        self.l_d += terms.l_d.item().as_f64();
        self.l_t += terms.l_t.item().as_f64();
        self.l_mi += terms.l_mi.item().as_f64();
        self.total += terms.total.item().as_f64();
        self.count += 1;
    }

    pub fn merge(&mut self, other: &TdmLosses) {
        self.l_z += other.l_z;
        self.l_d += other.l_d;
        self.l_t += other.l_t;
        self.l_mi += other.l_mi;
        self.total += other.total;
        self.count += other.count;
    }

    /// Per-item averages.
    pub fn mean(&self) -> TdmLosses {
        let n = self.count.max(1) as f64;
        TdmLosses {
            l_z: self.l_z / n,
            l_d: self.l_d / n,
            l_t: self.l_t / n,
            l_mi: self.l_mi / n,
            total: self.total / n,
            count: self.count,
        }
    }
}
