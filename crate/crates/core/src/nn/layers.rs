//! Embedding, dense, LSTM and bidirectional multi-layer LSTM layers.
//!
//! Batched sequences are laid out time-major: row `t * B + b` holds step `t`
//! of sequence `b`. Sequences are right-padded; a padded step leaves the
//! recurrent state untouched, so padding never leaks into real positions.

use rand::Rng as _;

use super::graph::{Graph, NnError, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn fan_in_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in.max(1) as f64).sqrt()
}

/// Lays out id sequences time-major, right-padded with `pad`. Returns the
/// flat ids and the sequence lengths.
pub fn time_major<S: AsRef<[usize]>>(seqs: &[S], pad: usize) -> (Vec<usize>, Vec<usize>) {
    let lengths: Vec<usize> = seqs.iter().map(|s| s.as_ref().len()).collect();
    let steps = lengths.iter().copied().max().unwrap_or(0);
    let mut ids = Vec::with_capacity(steps * seqs.len());
    for t in 0..steps {
        for s in seqs {
            ids.push(s.as_ref().get(t).copied().unwrap_or(pad));
        }
    }
    (ids, lengths)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    /// Trainable table, uniform in `±sqrt(3 / dim)`.
    pub fn init(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut Rng) -> Self {
        let bound = (3.0 / dim.max(1) as f64).sqrt();
        Embedding {
            table: store.add(name, Tensor::uniform(vocab, dim, bound, rng)),
        }
    }

    pub fn frozen(store: &mut ParamStore, name: &str, table: Tensor) -> Self {
        Embedding {
            table: store.add_frozen(name, table),
        }
    }

    pub fn dim(&self, store: &ParamStore) -> usize {
        store.get(self.table).value.cols()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var, NnError> {
        let t = g.param(store, self.table);
        g.gather(t, ids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    /// `[out x in]`
    pub weight: ParamId,
    /// `[1 x out]`
    pub bias: ParamId,
}

impl Dense {
    pub fn init(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        let b = fan_in_bound(input);
        Dense {
            weight: store.add(format!("{name}.weight"), Tensor::uniform(output, input, b, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::uniform(1, output, b, rng)),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul_bt(x, w)?;
        g.add_row(y, b)
    }
}

/// One LSTM direction. Gate blocks are stacked in the order
/// input, forget, cell candidate, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCellParams {
    /// `[4H x I]`
    pub input_weights: ParamId,
    /// `[4H x H]`
    pub recurrent_weights: ParamId,
    /// `[1 x 4H]`
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmCellParams {
    /// Uniform `±sqrt(1/fan_in)` weights; forget-gate bias starts at 1.
    pub fn init(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let wi = Tensor::uniform(4 * hidden, input, fan_in_bound(input), rng);
        let wh = Tensor::uniform(4 * hidden, hidden, fan_in_bound(hidden), rng);
        let mut b = Tensor::uniform(1, 4 * hidden, fan_in_bound(hidden), rng);
        for k in hidden..2 * hidden {
            b.data_mut()[k] = 1.0;
        }
        LstmCellParams {
            input_weights: store.add(format!("{name}.w_input"), wi),
            recurrent_weights: store.add(format!("{name}.w_recurrent"), wh),
            bias: store.add(format!("{name}.bias"), b),
            input_size: input,
            hidden_size: hidden,
        }
    }

    /// Rebuilds the handle for a store loaded from disk.
    pub fn find(store: &ParamStore, name: &str) -> Option<Self> {
        let input_weights = store.find(&format!("{name}.w_input"))?;
        let recurrent_weights = store.find(&format!("{name}.w_recurrent"))?;
        let bias = store.find(&format!("{name}.bias"))?;
        let (h4, input_size) = store.get(input_weights).value.shape();
        Some(LstmCellParams {
            input_weights,
            recurrent_weights,
            bias,
            input_size,
            hidden_size: h4 / 4,
        })
    }
}

/// `(h, c)` after one step. `x: [B x I]`, `h_prev`, `c_prev: [B x H]`.
pub fn lstm_cell(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmCellParams,
) -> Result<(Var, Var), NnError> {
    let wi = g.param(store, p.input_weights);
    let wh = g.param(store, p.recurrent_weights);
    let b = g.param(store, p.bias);
    let xi = g.matmul_bt(x, wi)?;
    let xi = g.add_row(xi, b)?;
    step(g, xi, h_prev, c_prev, wh, p.hidden_size)
}

fn step(g: &mut Graph, pre: Var, h: Var, c: Var, wh: Var, hidden: usize) -> Result<(Var, Var), NnError> {
    let hh = g.matmul_bt(h, wh)?;
    let gates = g.add(pre, hh)?;
    let hc = g.lstm_pointwise(gates, c)?;
    let h_new = g.slice_cols(hc, 0, hidden)?;
    let c_new = g.slice_cols(hc, hidden, hidden)?;
    Ok((h_new, c_new))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    /// Applied to every layer input.
    pub input: f64,
    /// Applied to `h_prev`, fresh mask per step.
    pub recurrent: f64,
}

impl Dropout {
    pub const NONE: Dropout = Dropout {
        input: 0.0,
        recurrent: 0.0,
    };
}

/// Inverted dropout mask: entries are 0 or `1 / (1 - rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut Rng) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Tensor::from_vec(rows, cols, data)
}

/// Identity in eval mode or at rate 0.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, mode: Mode, rng: &mut Option<&mut Rng>) -> Result<Var, NnError> {
    match (mode, rng.as_deref_mut()) {
        (Mode::Train, Some(r)) if rate > 0.0 => {
            let (rows, cols) = g.shape(x);
            let m = dropout_mask(rows, cols, rate, r);
            g.mul_const(x, m)
        }
        _ => Ok(x),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    /// `(forward, backward)` per stacked layer.
    pub layers: Vec<(LstmCellParams, LstmCellParams)>,
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstmOutput {
    /// `[T*B x 2H]`, time-major, forward half first.
    pub outputs: Var,
    /// Last-layer forward state after each sequence's final real step.
    pub final_forward: Var,
    /// Last-layer backward state after reading each sequence back to step 0.
    pub final_backward: Var,
}

impl BiLstm {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut out = Vec::with_capacity(layers);
        let mut in_size = input;
        for l in 0..layers {
            let f = LstmCellParams::init(store, &format!("{name}.l{l}.fwd"), in_size, hidden, rng);
            let b = LstmCellParams::init(store, &format!("{name}.l{l}.bwd"), in_size, hidden, rng);
            out.push((f, b));
            in_size = 2 * hidden;
        }
        BiLstm { layers: out }
    }

    pub fn find(store: &ParamStore, name: &str) -> Option<Self> {
        let mut layers = Vec::new();
        for l in 0.. {
            match (
                LstmCellParams::find(store, &format!("{name}.l{l}.fwd")),
                LstmCellParams::find(store, &format!("{name}.l{l}.bwd")),
            ) {
                (Some(f), Some(b)) => layers.push((f, b)),
                _ => break,
            }
        }
        (!layers.is_empty()).then_some(BiLstm { layers })
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].0.hidden_size
    }

    /// Runs a right-padded batch. `input` is `[T*B x I]` time-major and
    /// `lengths[b]` is the real length of sequence `b`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: Var,
        lengths: &[usize],
        dropout_cfg: Dropout,
        mode: Mode,
        mut rng: Option<&mut Rng>,
    ) -> Result<BiLstmOutput, NnError> {
        let batch = lengths.len();
        let steps = lengths.iter().copied().max().unwrap_or(0);
        if batch == 0 || steps == 0 {
            return Err(NnError::EmptySequence);
        }
        let rows = g.shape(input).0;
        if rows != steps * batch {
            return Err(NnError::ShapeMismatch {
                op: "bilstm",
                left: (rows, g.shape(input).1),
                right: (steps, batch),
            });
        }
        let masks: Vec<Vec<bool>> = (0..steps)
            .map(|t| lengths.iter().map(|&l| t < l).collect())
            .collect();
        let mut x = input;
        let mut last = None;
        for (fwd, bwd) in &self.layers {
            let x_in = dropout(g, x, dropout_cfg.input, mode, &mut rng)?;
            let (f_out, f_final) = run_direction(g, store, x_in, fwd, &masks, false, dropout_cfg, mode, &mut rng)?;
            let (b_out, b_final) = run_direction(g, store, x_in, bwd, &masks, true, dropout_cfg, mode, &mut rng)?;
            x = g.concat_cols(&[f_out, b_out])?;
            last = Some((f_final, b_final));
        }
        let (final_forward, final_backward) = last.expect("at least one layer");
        Ok(BiLstmOutput {
            outputs: x,
            final_forward,
            final_backward,
        })
    }

    /// Single unbatched sequence `[T x I] -> [T x 2H]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        seq: Var,
        dropout_cfg: Dropout,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<Var, NnError> {
        let t = g.shape(seq).0;
        Ok(self.forward_batch(g, store, seq, &[t], dropout_cfg, mode, rng)?.outputs)
    }
}

#[allow(clippy::too_many_arguments)]
fn run_direction(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    p: &LstmCellParams,
    masks: &[Vec<bool>],
    reverse: bool,
    dropout_cfg: Dropout,
    mode: Mode,
    rng: &mut Option<&mut Rng>,
) -> Result<(Var, Var), NnError> {
    let batch = masks[0].len();
    let hidden = p.hidden_size;
    let wi = g.param(store, p.input_weights);
    let wh = g.param(store, p.recurrent_weights);
    let b = g.param(store, p.bias);
    let xw = g.matmul_bt(x, wi)?;
    let xw = g.add_row(xw, b)?;
    let mut h = g.constant(Tensor::zeros(batch, hidden));
    let mut c = g.constant(Tensor::zeros(batch, hidden));
    let steps = masks.len();
    let mut outs = vec![h; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let pre = g.slice_rows(xw, t * batch, batch)?;
        let h_in = dropout(g, h, dropout_cfg.recurrent, mode, rng)?;
        let (h_new, c_new) = step(g, pre, h_in, c, wh, hidden)?;
        let mask = &masks[t];
        if mask.iter().all(|&m| m) {
            h = h_new;
            c = c_new;
        } else {
            h = g.select_rows(mask, h_new, h)?;
            c = g.select_rows(mask, c_new, c)?;
        }
        outs[t] = h;
    }
    Ok((g.concat_rows(&outs)?, h))
}
