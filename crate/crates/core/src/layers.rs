//! Parameterized building blocks shared by the OOV predictor and the tagger.
//!
//! Each `*Params` struct only holds [`ParamId`]s; the values live in a
//! [`ParamStore`]. Forward functions record onto a [`Tape`] that borrows the
//! store.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::training::init::kaiming_init;

/// Bias given to the forget gate at initialization.
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl EmbeddingParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let table = store.add(name, kaiming_init(vec![rows, dim], dim, rng));
        EmbeddingParams { table, rows, dim }
    }

    pub fn lookup<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, index: usize) -> Result<Var> {
        embedding_lookup(tape, store, self, index)
    }
}

/// One LSTM direction. Gate weights are stacked row-wise in the order
/// input, forget, cell, output: `w` is `[4h, in]`, `u` is `[4h, h]`, `b` is `[4h]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let h = hidden_dim;
        let w = store.add(format!("{name}.w"), kaiming_init(vec![4 * h, input_dim], input_dim, rng));
        let u = store.add(format!("{name}.u"), kaiming_init(vec![4 * h, h], h, rng));
        let mut bias = vec![0.0; 4 * h];
        bias[h..2 * h].fill(FORGET_BIAS);
        let b = store.add(format!("{name}.b"), Tensor::vector(bias).expect("finite bias"));
        LstmParams {
            w,
            u,
            b,
            input_dim,
            hidden_dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        BiLstmParams {
            fwd: LstmParams::new(store, &format!("{name}.fwd"), input_dim, hidden_dim, rng),
            bwd: LstmParams::new(store, &format!("{name}.bwd"), input_dim, hidden_dim, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden_dim + self.bwd.hidden_dim
    }
}

/// Scores each hidden state with a shared `[1, width]` weight and a scalar bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub width: usize,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.w"), kaiming_init(vec![1, width], width, rng));
        let bias = store.add(format!("{name}.b"), Tensor::zeros(vec![1]));
        AttentionParams { weight, bias, width }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.w"), kaiming_init(vec![out_dim, in_dim], in_dim, rng));
        let bias = store.add(format!("{name}.b"), Tensor::zeros(vec![out_dim]));
        LinearParams {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }
}

pub fn embedding_lookup<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    params: &EmbeddingParams,
    index: usize,
) -> Result<Var> {
    if index >= params.rows {
        return Err(Error::IndexOutOfRange {
            index,
            len: params.rows,
        });
    }
    let table = tape.param(store, params.table)?;
    tape.slice(table, index * params.dim, params.dim)
}

/// One LSTM step without peepholes: returns `(h, c)`.
pub fn lstm_cell_step<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    params: &LstmParams,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let h = params.hidden_dim;
    if tape.shape(x) != [params.input_dim] || tape.shape(h_prev) != [h] || tape.shape(c_prev) != [h] {
        return Err(Error::shape(
            "lstm_cell_step",
            format!(
                "x {:?}, h {:?}, c {:?} for input {} hidden {h}",
                tape.shape(x),
                tape.shape(h_prev),
                tape.shape(c_prev),
                params.input_dim
            ),
        ));
    }
    let w = tape.param(store, params.w)?;
    let u = tape.param(store, params.u)?;
    let b = tape.param(store, params.b)?;
    let wx = tape.matvec(w, x)?;
    let uh = tape.matvec(u, h_prev)?;
    let pre = tape.add(wx, uh)?;
    let pre = tape.add(pre, b)?;

    let i = tape.slice(pre, 0, h)?;
    let f = tape.slice(pre, h, h)?;
    let g = tape.slice(pre, 2 * h, h)?;
    let o = tape.slice(pre, 3 * h, h)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let o = tape.sigmoid(o)?;

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c))
}

fn run_direction<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    params: &LstmParams,
    inputs: impl Iterator<Item = Var>,
) -> Result<Vec<Var>> {
    let zeros = vec![0.0; params.hidden_dim];
    let mut h = tape.constant_vector(zeros.clone())?;
    let mut c = tape.constant_vector(zeros)?;
    let mut out = Vec::new();
    for x in inputs {
        (h, c) = lstm_cell_step(tape, store, params, x, h, c)?;
        out.push(h);
    }
    Ok(out)
}

/// Runs both directions over `inputs` and concatenates `[forward, backward]`
/// per position. When `skip` is set, that position is dropped before
/// encoding, so the result is exactly the encoding of the shortened sequence.
pub fn bilstm_encode<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    params: &BiLstmParams,
    inputs: &[Var],
    skip: Option<usize>,
) -> Result<Vec<Var>> {
    let kept: Vec<Var> = inputs
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, &v)| v)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptySequence);
    }
    let fwd = run_direction(tape, store, &params.fwd, kept.iter().copied())?;
    let mut bwd = run_direction(tape, store, &params.bwd, kept.iter().rev().copied())?;
    bwd.reverse();
    fwd.into_iter()
        .zip(bwd)
        .map(|(f, b)| tape.concat(&[f, b]))
        .collect()
}

/// Output of [`attention_pool`].
#[derive(Clone, Debug)]
pub struct Pooled {
    pub context: Var,
    pub alphas: Var,
    pub scores: Var,
}

/// `s_i = w . h_i + b`, `alpha = softmax(s)`, `context = sum_i alpha_i h_i`.
pub fn attention_pool<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    params: &AttentionParams,
    hidden: &[Var],
) -> Result<Pooled> {
    if hidden.is_empty() {
        return Err(Error::EmptySequence);
    }
    let w = tape.param(store, params.weight)?;
    let b = tape.param(store, params.bias)?;
    let mut scores = Vec::with_capacity(hidden.len());
    for &h in hidden {
        let s = tape.matvec(w, h)?;
        scores.push(tape.add(s, b)?);
    }
    let scores = tape.concat(&scores)?;
    let alphas = tape.softmax(scores)?;
    let context = tape.weighted_sum(alphas, hidden)?;
    Ok(Pooled {
        context,
        alphas,
        scores,
    })
}

/// `W x + b`
pub fn linear_forward<'p>(
    tape: &mut Tape<'p>,
    store: &'p ParamStore,
    params: &LinearParams,
    x: Var,
) -> Result<Var> {
    if tape.shape(x) != [params.in_dim] {
        return Err(Error::shape(
            "linear_forward",
            format!("input {:?}, expected [{}]", tape.shape(x), params.in_dim),
        ));
    }
    let w = tape.param(store, params.weight)?;
    let b = tape.param(store, params.bias)?;
    let y = tape.matvec(w, x)?;
    tape.add(y, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn vecs<'p>(tape: &mut Tape<'p>, rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Var> {
        (0..n)
            .map(|_| {
                let v = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                tape.constant_vector(v).unwrap()
            })
            .collect()
    }

    fn zero_params(store: &mut ParamStore, p: &LstmParams) {
        for id in [p.w, p.u, p.b] {
            store.get_mut(id).values_mut().fill(0.0);
        }
    }

    #[test]
    fn identity_table_lookup() {
        let mut store = ParamStore::new();
        let table = store.add(
            "emb",
            Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap(),
        );
        let p = EmbeddingParams { table, rows: 3, dim: 3 };
        let mut tape = Tape::new();
        let row = p.lookup(&mut tape, &store, 1).unwrap();
        assert_eq!(tape.value(row), &[0.0, 1.0, 0.0]);
        let s = tape.sum(row).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param(table).unwrap(), &[0., 0., 0., 1., 1., 1., 0., 0., 0.]);
        assert!(matches!(
            p.lookup(&mut tape, &store, 3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn zero_lstm_closed_forms() {
        let mut store = ParamStore::new();
        let p = LstmParams::new(&mut store, "l", 3, 2, &mut rng(0));
        zero_params(&mut store, &p);
        let mut tape = Tape::new();
        let x = tape.constant_vector(vec![0.3, -0.2, 0.9]).unwrap();
        let h0 = tape.constant_vector(vec![0.0, 0.0]).unwrap();
        let (h, c) = lstm_cell_step(&mut tape, &store, &p, x, h0, h0).unwrap();
        assert_eq!(tape.value(h), &[0.0, 0.0]);
        assert_eq!(tape.value(c), &[0.0, 0.0]);

        let cv = tape.constant_vector(vec![0.8, -1.4]).unwrap();
        let (h, c) = lstm_cell_step(&mut tape, &store, &p, x, h0, cv).unwrap();
        for (k, v) in [0.8f64, -1.4].into_iter().enumerate() {
            assert!((tape.value(c)[k] - 0.5 * v).abs() < 1e-15);
            assert!((tape.value(h)[k] - 0.5 * (0.5 * v).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn lstm_rejects_bad_shapes() {
        let mut store = ParamStore::new();
        let p = LstmParams::new(&mut store, "l", 3, 2, &mut rng(0));
        let mut tape = Tape::new();
        let x = tape.constant_vector(vec![0.0; 4]).unwrap();
        let h0 = tape.constant_vector(vec![0.0; 2]).unwrap();
        assert!(matches!(
            lstm_cell_step(&mut tape, &store, &p, x, h0, h0),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let mut store = ParamStore::new();
        let p = LstmParams::new(&mut store, "l", 3, 2, &mut rng(0));
        assert_eq!(store.get(p.b).values(), &[0., 0., 1., 1., 0., 0., 0., 0.]);
    }

    #[test]
    fn bilstm_lengths_and_skip() {
        let mut store = ParamStore::new();
        let p = BiLstmParams::new(&mut store, "bi", 4, 128, &mut rng(1));
        let mut r = rng(2);
        let mut tape = Tape::new();
        let xs = vecs(&mut tape, &mut r, 3, 4);
        let one = bilstm_encode(&mut tape, &store, &p, &xs[..1], None).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(tape.shape(one[0]), &[256]);

        let skipped = bilstm_encode(&mut tape, &store, &p, &xs, Some(1)).unwrap();
        let deleted = bilstm_encode(&mut tape, &store, &p, &[xs[0], xs[2]], None).unwrap();
        assert_eq!(skipped.len(), 2);
        for (a, b) in skipped.iter().zip(&deleted) {
            assert_eq!(tape.value(*a), tape.value(*b));
        }
        assert!(matches!(
            bilstm_encode(&mut tape, &store, &p, &xs[..1], Some(0)),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn palindrome_symmetry_with_tied_directions() {
        let mut store = ParamStore::new();
        let fwd = LstmParams::new(&mut store, "f", 3, 5, &mut rng(4));
        let p = BiLstmParams { fwd, bwd: fwd };
        let mut r = rng(5);
        let mut tape = Tape::new();
        let half = vecs(&mut tape, &mut r, 3, 3);
        let seq = vec![half[0], half[1], half[2], half[1], half[0]];
        let out = bilstm_encode(&mut tape, &store, &p, &seq, None).unwrap();
        let n = out.len();
        for t in 0..n {
            let a = &tape.value(out[t])[..5];
            let b = &tape.value(out[n - 1 - t])[5..];
            assert_eq!(a, b);
        }
    }

    #[test]
    fn attention_degenerate_cases() {
        let mut store = ParamStore::new();
        let p = AttentionParams::new(&mut store, "att", 4, &mut rng(6));
        let mut r = rng(7);
        let mut tape = Tape::new();
        let hs = vecs(&mut tape, &mut r, 3, 4);
        let one = attention_pool(&mut tape, &store, &p, &hs[..1]).unwrap();
        assert_eq!(tape.value(one.alphas), &[1.0]);
        assert_eq!(tape.value(one.context), tape.value(hs[0]));
        assert!(matches!(
            attention_pool(&mut tape, &store, &p, &[]),
            Err(Error::EmptySequence)
        ));

        store.get_mut(p.weight).values_mut().fill(0.0);
        let mut tape = Tape::new();
        let hs = vecs(&mut tape, &mut r, 3, 4);
        let pooled = attention_pool(&mut tape, &store, &p, &hs).unwrap();
        for k in 0..4 {
            let mean = hs.iter().map(|&h| tape.value(h)[k]).sum::<f64>() / 3.0;
            assert!((tape.value(pooled.context)[k] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut store = ParamStore::new();
        let p = LinearParams::new(&mut store, "lin", 3, 3, &mut rng(8));
        let w = store.get_mut(p.weight).values_mut();
        w.fill(0.0);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let mut tape = Tape::new();
        let x = tape.constant_vector(vec![0.5, -2.0, 7.0]).unwrap();
        let y = linear_forward(&mut tape, &store, &p, x).unwrap();
        assert_eq!(tape.value(y), &[0.5, -2.0, 7.0]);

        store.get_mut(p.weight).values_mut().fill(0.0);
        store.get_mut(p.bias).values_mut().copy_from_slice(&[1.0, 2.0, 3.0]);
        let mut tape = Tape::new();
        let x = tape.constant_vector(vec![0.5, -2.0, 7.0]).unwrap();
        let y = linear_forward(&mut tape, &store, &p, x).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0, 3.0]);

        let bad = tape.constant_vector(vec![0.0; 2]).unwrap();
        assert!(linear_forward(&mut tape, &store, &p, bad).is_err());
    }

    #[test]
    fn stacked_layers_gradient_check() {
        let mut r = rng(12);
        let mut store = ParamStore::new();
        let emb = EmbeddingParams::new(&mut store, "emb", 5, 3, &mut r);
        let bi = BiLstmParams::new(&mut store, "bi", 3, 2, &mut r);
        let att = AttentionParams::new(&mut store, "att", 4, &mut r);
        let lin = LinearParams::new(&mut store, "lin", 4, 3, &mut r);
        let coords: Vec<_> = store
            .ids()
            .flat_map(|id| (0..store.get(id).len()).map(move |k| (id, k)))
            .collect();
        let err = gradient_check_params(&mut store, &coords, 1e-5, |tape, store| {
            let xs = [3, 1, 4]
                .iter()
                .map(|&i| emb.lookup(tape, store, i))
                .collect::<Result<Vec<_>>>()?;
            let hs = bilstm_encode(tape, store, &bi, &xs, Some(1))?;
            let pooled = attention_pool(tape, store, &att, &hs)?;
            let y = linear_forward(tape, store, &lin, pooled.context)?;
            tape.cross_entropy(y, 2)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
