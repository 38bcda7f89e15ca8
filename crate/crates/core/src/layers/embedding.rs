use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::Binder;
use crate::error::{Error, Result};
use crate::tensor::{ParamKey, ParamStore, Real, Tensor, Var};

/// Row reserved for padding; it stays zero and never receives updates.
pub const PAD_INDEX: usize = 0;

#[derive(Clone, Copy, Debug)]
pub struct EmbeddingTable {
    pub table: ParamKey,
    pub vocab: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut values: Vec<T> = (0..vocab * dim)
            .map(|_| T::lit(rng.gen_range(-0.1..0.1)))
            .collect();
        values[PAD_INDEX * dim..(PAD_INDEX + 1) * dim].fill(T::zero());
        let table = store.add(
            name.to_string(),
            Tensor::matrix(vocab, dim, values).expect("positive dims"),
        );
        EmbeddingTable { table, vocab, dim }
    }

    pub fn lookup<'t, T: Real>(&self, b: &Binder<'t, '_, T>, ids: &[usize]) -> Result<Var<'t, T>> {
        b.get(self.table).gather_rows(ids)
    }
}

/// Overwrites rows of `table` from a whitespace-separated text file with
/// lines `token v1 v2 ... v_dim`. Tokens absent from `vocab` are ignored;
/// vocabulary entries absent from the file keep their current values.
/// Returns the number of rows replaced.
pub fn load_text_embeddings<T: Real>(
    path: &Path,
    vocab: &HashMap<String, usize>,
    table: &mut Tensor<T>,
) -> Result<usize> {
    let (rows, dim) = table.dims2();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut replaced = 0;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let Some(&row) = vocab.get(token) else { continue };
        if row == PAD_INDEX || row >= rows {
            continue;
        }
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format {
                what: "embedding file",
                line: lineno + 1,
                message: e.to_string(),
            })?;
        if values.len() != dim {
            return Err(Error::Format {
                what: "embedding file",
                line: lineno + 1,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        let data = table.data_mut();
        for (d, v) in data[row * dim..(row + 1) * dim].iter_mut().zip(values) {
            *d = T::lit(v);
        }
        replaced += 1;
    }
    Ok(replaced)
}
