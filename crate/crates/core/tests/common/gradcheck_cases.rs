//! Gradient-check cases shared by the gradcheck suite and the acceptance
//! run. Each case returns the worst relative error over its instances.

use casefold::crf::{self, CrfParams};
use casefold::nn::layers::lstm_cell;
use casefold::nn::{BiLstm, Dropout, Graph, LstmCellParams, Mode, ParamStore, Tensor, Var};
use casefold::rng;
use rand::Rng as _;

const H: f64 = 1e-5;
const INSTANCES: u64 = 20;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs().max(n.abs()))
}

/// Max relative error between analytic and numeric gradients of a scalar
/// function of graph inputs.
fn check_inputs(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars);
    g.backward(out);
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect();
    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut worst = 0.0f64;
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic[k].data()[i], numeric));
        }
    }
    worst
}

/// Same for every trainable parameter in a store.
fn check_params(store: &ParamStore, f: impl Fn(&mut Graph, &ParamStore) -> Var) -> f64 {
    let mut g = Graph::new();
    let out = f(&mut g, store);
    g.backward(out);
    let grads = g.param_grads(store);
    let mut worst = 0.0f64;
    for (id, p) in store.iter() {
        for i in 0..p.value.len() {
            let mut s = store.clone();
            s.get_mut(id).value.data_mut()[i] += H;
            let mut gp = Graph::new();
            let op = f(&mut gp, &s);
            let up = gp.value(op).item();
            let mut s = store.clone();
            s.get_mut(id).value.data_mut()[i] -= H;
            let mut gm = Graph::new();
            let om = f(&mut gm, &s);
            let down = gm.value(om).item();
            let numeric = (up - down) / (2.0 * H);
            let analytic = grads[id.index()].as_ref().map_or(0.0, |t| t.data()[i]);
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}

fn rand_tensor(r: &mut rng::Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::uniform(rows, cols, 1.0, r)
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Var {
    let (r, c) = g.shape(x);
    let mut rr = rng::derived(seed, "weights");
    let w = g.constant(rand_tensor(&mut rr, r, c));
    let prod = g.mul(x, w).unwrap();
    g.sum(prod)
}

pub fn linear_ops() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng::seeded(seed);
        let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
        let ins = vec![
            rand_tensor(&mut r, m, k),
            rand_tensor(&mut r, k, n),
            rand_tensor(&mut r, n, k),
            rand_tensor(&mut r, 1, n),
            rand_tensor(&mut r, m, n),
        ];
        let e = check_inputs(&ins, |g, v| {
            let ab = g.matmul(v[0], v[1]).unwrap();
            let abt = g.matmul_bt(v[0], v[2]).unwrap();
            let s = g.add(ab, abt).unwrap();
            let s = g.add_row(s, v[3]).unwrap();
            let s = g.sub(s, v[4]).unwrap();
            let s = g.scale(s, 0.7);
            weighted_sum(g, s, seed)
        });
        worst = worst.max(e);
    }
    worst
}

pub fn elementwise_ops() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng::seeded(100 + seed);
        let (m, n) = (r.gen_range(1..4), r.gen_range(1..5));
        let ins = vec![rand_tensor(&mut r, m, n), rand_tensor(&mut r, m, n)];
        let e = check_inputs(&ins, |g, v| {
            let a = g.sigmoid(v[0]);
            let b = g.tanh(v[1]);
            let p = g.mul(a, b).unwrap();
            let q = g.mul(v[0], v[0]).unwrap();
            let s = g.add(p, q).unwrap();
            weighted_sum(g, s, seed)
        });
        worst = worst.max(e);
    }
    worst
}

pub fn structural_ops() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng::seeded(200 + seed);
        let rows = r.gen_range(2..5);
        let ins = vec![rand_tensor(&mut r, rows, 3), rand_tensor(&mut r, rows, 2), rand_tensor(&mut r, 4, 5)];
        let mask: Vec<bool> = (0..rows).map(|_| r.gen_bool(0.5)).collect();
        let ids: Vec<usize> = (0..rows + 1).map(|_| r.gen_range(0..4)).collect();
        let flat: Vec<usize> = (0..6).map(|_| r.gen_range(0..20)).collect();
        let e = check_inputs(&ins, |g, v| {
            let cat = g.concat_cols(&[v[0], v[1]]).unwrap();
            let sl = g.slice_cols(cat, 1, 3).unwrap();
            let sel = g.select_rows(&mask, sl, v[0]).unwrap();
            let top = g.slice_rows(sel, 0, 1).unwrap();
            let gathered = g.gather(v[2], &ids).unwrap();
            let gathered = g.slice_cols(gathered, 0, 3).unwrap();
            let rows_cat = g.concat_rows(&[sel, top, gathered]).unwrap();
            let elems = g.gather_elems(v[2], &flat).unwrap();
            let lse = g.logsumexp_rows(rows_cat);
            let a = weighted_sum(g, lse, seed);
            let b = weighted_sum(g, elems, seed + 1);
            g.add(a, b).unwrap()
        });
        worst = worst.max(e);
    }
    worst
}

pub fn softmax_cross_entropy() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng::seeded(300 + seed);
        let (t, c) = (r.gen_range(1..5), r.gen_range(2..6));
        let targets: Vec<usize> = (0..t).map(|_| r.gen_range(0..c)).collect();
        let mut mask: Vec<bool> = (0..t).map(|_| r.gen_bool(0.7)).collect();
        mask[0] = true;
        let ins = vec![Tensor::uniform(t, c, 3.0, &mut r)];
        let e = check_inputs(&ins, |g, v| g.softmax_cross_entropy(v[0], &targets, &mask).unwrap());
        worst = worst.max(e);
    }
    worst
}

pub fn logsumexp_transition_step() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng::seeded(400 + seed);
        let (b, c) = (r.gen_range(1..4), r.gen_range(1..5));
        let ins = vec![Tensor::uniform(b, c, 2.0, &mut r), Tensor::uniform(c, c, 2.0, &mut r)];
        let e = check_inputs(&ins, |g, v| {
            let o = g.logsumexp_trans(v[0], v[1]).unwrap();
            weighted_sum(g, o, seed)
        });
        worst = worst.max(e);
    }
    worst
}

pub fn lstm_cell_gradients() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng::seeded(500 + seed);
        let (b, i, h) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
        let mut store = ParamStore::new();
        let p = LstmCellParams::init(&mut store, "cell", i, h, &mut r);
        let x = rand_tensor(&mut r, b, i);
        let h0 = rand_tensor(&mut r, b, h);
        let c0 = rand_tensor(&mut r, b, h);
        let e = check_params(&store, |g, s| {
            let (xv, hv, cv) = (g.constant(x.clone()), g.constant(h0.clone()), g.constant(c0.clone()));
            let (hn, cn) = lstm_cell(g, s, xv, hv, cv, &p).unwrap();
            let both = g.concat_cols(&[hn, cn]).unwrap();
            weighted_sum(g, both, seed)
        });
        worst = worst.max(e);
        let e = check_inputs(&[x.clone(), h0.clone(), c0.clone()], |g, v| {
            let (hn, cn) = lstm_cell(g, &store, v[0], v[1], v[2], &p).unwrap();
            let both = g.concat_cols(&[hn, cn]).unwrap();
            weighted_sum(g, both, seed)
        });
        worst = worst.max(e);
    }
    worst
}

pub fn bilstm_gradients_with_padding() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng::seeded(600 + seed);
        let (i, h, layers) = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..3));
        let lengths: Vec<usize> = (0..r.gen_range(1..3)).map(|_| r.gen_range(1..4)).collect();
        let t = *lengths.iter().max().unwrap();
        let mut store = ParamStore::new();
        let net = BiLstm::init(&mut store, "enc", i, h, layers, &mut r);
        let x = rand_tensor(&mut r, t * lengths.len(), i);
        let e = check_params(&store, |g, s| {
            let xv = g.constant(x.clone());
            let out = net
                .forward_batch(g, s, xv, &lengths, Dropout::NONE, Mode::Eval, None)
                .unwrap();
            let all = g.concat_cols(&[out.final_forward, out.final_backward]).unwrap();
            let a = weighted_sum(g, out.outputs, seed);
            let b = weighted_sum(g, all, seed + 7);
            g.add(a, b).unwrap()
        });
        worst = worst.max(e);
    }
    worst
}

pub fn crf_nll_gradients() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng::seeded(700 + seed);
        let (t, c) = (3, 3);
        let mut store = ParamStore::new();
        let p = CrfParams::init(&mut store, c, &mut r);
        let emissions = Tensor::uniform(t, c, 2.0, &mut r);
        let tags: Vec<usize> = (0..t).map(|_| r.gen_range(0..c)).collect();
        let mask = vec![true; t];
        let e = check_params(&store, |g, s| {
            let ev = g.constant(emissions.clone());
            crf::crf_neg_log_likelihood(g, s, &p, ev, &tags, &mask).unwrap()
        });
        worst = worst.max(e);
        let e = check_inputs(std::slice::from_ref(&emissions), |g, v| {
            crf::crf_neg_log_likelihood(g, &store, &p, v[0], &tags, &mask).unwrap()
        });
        worst = worst.max(e);
    }
    worst
}

pub fn crf_batch_nll_gradients() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng::seeded(800 + seed);
        let c = r.gen_range(1..4);
        let mut store = ParamStore::new();
        let p = CrfParams::init(&mut store, c, &mut r);
        let tags: Vec<Vec<usize>> = (0..r.gen_range(1..4))
            .map(|_| (0..r.gen_range(1..4)).map(|_| r.gen_range(0..c)).collect())
            .collect();
        let steps = tags.iter().map(Vec::len).max().unwrap();
        let emissions = Tensor::uniform(steps * tags.len(), c, 2.0, &mut r);
        let e = check_params(&store, |g, s| {
            let ev = g.constant(emissions.clone());
            crf::neg_log_likelihood_batch(g, s, &p, ev, &tags).unwrap()
        });
        worst = worst.max(e);
    }
    worst
}

/// Every case with its tolerance.
pub const CASES: &[(&str, fn() -> f64, f64)] = &[
    ("linear ops", linear_ops, 1e-6),
    ("elementwise ops", elementwise_ops, 1e-4),
    ("structural ops", structural_ops, 1e-4),
    ("softmax cross-entropy", softmax_cross_entropy, 1e-4),
    ("logsumexp transition step", logsumexp_transition_step, 1e-4),
    ("lstm cell", lstm_cell_gradients, 1e-4),
    ("bilstm with padding", bilstm_gradients_with_padding, 1e-4),
    ("crf nll", crf_nll_gradients, 1e-5),
    ("crf batch nll", crf_batch_nll_gradients, 1e-5),
];
