//! Neural building blocks on top of the tape, plus the Adam optimizer.

mod adam;
mod embedding;
mod gru;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamKey, ParamStore, Real, Tape, Tensor, Var};

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use embedding::{load_text_embeddings, EmbeddingTable, PAD_INDEX};
pub use gru::{bigru_encode, gru_cell_step, BiGruOutput, BoundGru, GruParams};

/// Binds parameter tables of one store onto a tape.
///
/// Tables of a trainable store become gradient-tracking leaves; tables of
/// a frozen store enter the graph as constants.
pub struct Binder<'t, 's, T: Real> {
    tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    trainable: bool,
}

impl<'t, 's, T: Real> Binder<'t, 's, T> {
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>, trainable: bool) -> Self {
        Binder {
            tape,
            store,
            trainable,
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn get(&self, key: ParamKey) -> Var<'t, T> {
        let value = self.store.get(key).clone();
        if self.trainable {
            self.tape.param(key, value)
        } else {
            self.tape.constant(value)
        }
    }
}

/// Uniform(-s, s) with `s = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| T::lit(rng.gen_range(-s..s)))
        .collect();
    Tensor::matrix(rows, cols, values).expect("positive dims")
}

/// Affine map with an `[out x in]` weight and `[out]` bias.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamKey,
    pub bias: ParamKey,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot_uniform(out_dim, in_dim, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn bind<'t, T: Real>(&self, b: &Binder<'t, '_, T>) -> BoundLinear<'t, T> {
        BoundLinear {
            weight: b.get(self.weight),
            bias: b.get(self.bias),
        }
    }
}

#[derive(Clone, Copy)]
pub struct BoundLinear<'t, T> {
    pub weight: Var<'t, T>,
    pub bias: Var<'t, T>,
}

impl<'t, T: Real> BoundLinear<'t, T> {
    /// `x W^T + b` applied to every row of `x`.
    pub fn forward(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul_t(&self.weight)?.add_row(&self.bias)
    }
}

/// Inverted dropout: zero each entry with probability `rate` and scale
/// survivors by `1 / (1 - rate)`. Identity outside training.
pub fn dropout<'t, T: Real, R: Rng>(
    x: &Var<'t, T>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var<'t, T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok(*x);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let shape = x.shape();
    let n: usize = shape.iter().product();
    let mask = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mask = x.tape().constant(Tensor::new(shape, mask)?);
    x.mul(&mask)
}
