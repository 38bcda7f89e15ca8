use rand::Rng;

use super::{glorot_uniform, Binder};
use crate::error::{Error, Result};
use crate::tensor::{ParamKey, ParamStore, Real, Tensor, Var};

/// One direction of a gated recurrent unit.
///
/// `z = sigmoid(W_z x + U_z h + b_z)`, `r = sigmoid(W_r x + U_r h + b_r)`,
/// `c = tanh(W_h x + U_h (r * h) + b_h)`, `h' = (1 - z) * h + z * c`.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub w_z: ParamKey,
    pub w_r: ParamKey,
    pub w_h: ParamKey,
    pub u_z: ParamKey,
    pub u_r: ParamKey,
    pub u_h: ParamKey,
    pub b_z: ParamKey,
    pub b_r: ParamKey,
    pub b_h: ParamKey,
    pub input_dim: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = |suffix: &str, cols: usize, rng: &mut R| {
            store.add(format!("{name}.{suffix}"), glorot_uniform(hidden, cols, rng))
        };
        let w_z = w("w_z", input_dim, rng);
        let w_r = w("w_r", input_dim, rng);
        let w_h = w("w_h", input_dim, rng);
        let u_z = w("u_z", hidden, rng);
        let u_r = w("u_r", hidden, rng);
        let u_h = w("u_h", hidden, rng);
        let b_z = store.add(format!("{name}.b_z"), Tensor::zeros(&[hidden]));
        let b_r = store.add(format!("{name}.b_r"), Tensor::zeros(&[hidden]));
        let b_h = store.add(format!("{name}.b_h"), Tensor::zeros(&[hidden]));
        GruParams {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
            input_dim,
            hidden,
        }
    }

    pub fn keys(&self) -> [ParamKey; 9] {
        [
            self.w_z, self.w_r, self.w_h, self.u_z, self.u_r, self.u_h, self.b_z, self.b_r,
            self.b_h,
        ]
    }

    pub fn bind<'t, T: Real>(&self, b: &Binder<'t, '_, T>) -> BoundGru<'t, T> {
        BoundGru {
            w_z: b.get(self.w_z),
            w_r: b.get(self.w_r),
            w_h: b.get(self.w_h),
            u_z: b.get(self.u_z),
            u_r: b.get(self.u_r),
            u_h: b.get(self.u_h),
            b_z: b.get(self.b_z),
            b_r: b.get(self.b_r),
            b_h: b.get(self.b_h),
            input_dim: self.input_dim,
            hidden: self.hidden,
        }
    }
}

#[derive(Clone, Copy)]
pub struct BoundGru<'t, T> {
    w_z: Var<'t, T>,
    w_r: Var<'t, T>,
    w_h: Var<'t, T>,
    u_z: Var<'t, T>,
    u_r: Var<'t, T>,
    u_h: Var<'t, T>,
    b_z: Var<'t, T>,
    b_r: Var<'t, T>,
    b_h: Var<'t, T>,
    input_dim: usize,
    hidden: usize,
}

impl<'t, T: Real> BoundGru<'t, T> {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn check(&self, xs: &Var<'t, T>, h0: &Var<'t, T>) -> Result<()> {
        let (xs_shape, h_shape) = (xs.shape(), h0.shape());
        if xs_shape.len() != 2 || xs_shape[1] != self.input_dim {
            return Err(Error::Shape {
                op: "gru input",
                lhs: xs_shape,
                rhs: vec![self.input_dim],
            });
        }
        if h_shape != [1, self.hidden] {
            return Err(Error::Shape {
                op: "gru hidden",
                lhs: h_shape,
                rhs: vec![1, self.hidden],
            });
        }
        Ok(())
    }

    fn step_projected(
        &self,
        xz: Var<'t, T>,
        xr: Var<'t, T>,
        xh: Var<'t, T>,
        h: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let z = xz.add(&h.matmul_t(&self.u_z)?)?.sigmoid();
        let r = xr.add(&h.matmul_t(&self.u_r)?)?.sigmoid();
        let cand = xh.add(&r.mul(&h)?.matmul_t(&self.u_h)?)?.tanh();
        h.add(&z.mul(&cand.sub(&h)?)?)
    }

    /// Runs the recurrence over the rows of `xs` starting from `h0`.
    ///
    /// Returns one hidden state per row, in processing order; with
    /// `reverse` the last row is consumed first.
    pub fn run(&self, xs: &Var<'t, T>, h0: &Var<'t, T>, reverse: bool) -> Result<Vec<Var<'t, T>>> {
        self.check(xs, h0)?;
        let n = xs.shape()[0];
        let xz = xs.matmul_t(&self.w_z)?.add_row(&self.b_z)?;
        let xr = xs.matmul_t(&self.w_r)?.add_row(&self.b_r)?;
        let xh = xs.matmul_t(&self.w_h)?.add_row(&self.b_h)?;
        let mut h = *h0;
        let mut states = Vec::with_capacity(n);
        for step in 0..n {
            let t = if reverse { n - 1 - step } else { step };
            let (a, b, c) = if n == 1 {
                (xz, xr, xh)
            } else {
                (xz.row(t)?, xr.row(t)?, xh.row(t)?)
            };
            h = self.step_projected(a, b, c, h)?;
            states.push(h);
        }
        Ok(states)
    }
}

/// Single GRU step: `x` is `[1 x in]`, `h_prev` is `[1 x H]`.
pub fn gru_cell_step<'t, T: Real>(
    x: &Var<'t, T>,
    h_prev: &Var<'t, T>,
    gru: &BoundGru<'t, T>,
) -> Result<Var<'t, T>> {
    let x_shape = x.shape();
    if x_shape != [1, gru.input_dim] {
        return Err(Error::Shape {
            op: "gru_cell_step",
            lhs: x_shape,
            rhs: vec![1, gru.input_dim],
        });
    }
    Ok(gru.run(x, h_prev, false)?[0])
}

/// Hidden states of both directions, indexed by sequence position.
pub struct BiGruOutput<'t, T> {
    pub forward: Vec<Var<'t, T>>,
    pub backward: Vec<Var<'t, T>>,
}

impl<'t, T: Real> BiGruOutput<'t, T> {
    /// `[forward at last position ; backward at first position]`, `[1 x 2H]`.
    pub fn final_state(&self) -> Result<Var<'t, T>> {
        let last = self.forward[self.forward.len() - 1];
        last.tape().concat_cols(&[last, self.backward[0]])
    }

    /// Per-position `[forward_j ; backward_j]`, `[n x 2H]`.
    pub fn positions(&self) -> Result<Var<'t, T>> {
        let tape = self.forward[0].tape();
        let f = tape.concat_rows(&self.forward)?;
        let b = tape.concat_rows(&self.backward)?;
        tape.concat_cols(&[f, b])
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }
}

/// Bidirectional encoding of the rows of `seq`.
pub fn bigru_encode<'t, T: Real>(
    seq: &Var<'t, T>,
    init_fwd: &Var<'t, T>,
    init_bwd: &Var<'t, T>,
    fwd: &BoundGru<'t, T>,
    bwd: &BoundGru<'t, T>,
) -> Result<BiGruOutput<'t, T>> {
    let shape = seq.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Empty("bigru_encode sequence"));
    }
    let forward = fwd.run(seq, init_fwd, false)?;
    let mut backward = bwd.run(seq, init_bwd, true)?;
    backward.reverse();
    Ok(BiGruOutput { forward, backward })
}
