//! Linear-chain CRF output layer.
//!
//! A path `y` over `T` steps scores
//! `start[y0] + sum_t emit[t, y_t] + sum_t trans[y_{t-1}, y_t] + end[y_{T-1}]`.
//! The log partition runs the forward recurrence in log space on the
//! autodiff graph, so its gradient comes from the same code path as the
//! value. Masked steps are dropped from the sequence entirely.

use crate::nn::graph::logsumexp;
use crate::nn::{Graph, NnError, ParamId, ParamStore, Tensor, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrfParams {
    /// `[C x C]`, row = from-tag, column = to-tag.
    pub transitions: ParamId,
    /// `[1 x C]`
    pub start: ParamId,
    /// `[1 x C]`
    pub end: ParamId,
    pub classes: usize,
}

impl CrfParams {
    pub fn init(store: &mut ParamStore, classes: usize, rng: &mut Rng) -> Self {
        let b = 0.1;
        CrfParams {
            transitions: store.add("crf.transitions", Tensor::uniform(classes, classes, b, rng)),
            start: store.add("crf.start", Tensor::uniform(1, classes, b, rng)),
            end: store.add("crf.end", Tensor::uniform(1, classes, b, rng)),
            classes,
        }
    }

    /// Parameters with the given values (tests, demos).
    pub fn from_tables(store: &mut ParamStore, tables: &CrfTables) -> Self {
        let c = tables.start.len();
        CrfParams {
            transitions: store.add("crf.transitions", tables.transitions.clone()),
            start: store.add("crf.start", Tensor::row(&tables.start)),
            end: store.add("crf.end", Tensor::row(&tables.end)),
            classes: c,
        }
    }

    pub fn find(store: &ParamStore) -> Option<Self> {
        let transitions = store.find("crf.transitions")?;
        Some(CrfParams {
            transitions,
            start: store.find("crf.start")?,
            end: store.find("crf.end")?,
            classes: store.get(transitions).value.rows(),
        })
    }

    pub fn tables(&self, store: &ParamStore) -> CrfTables {
        CrfTables {
            transitions: store.get(self.transitions).value.clone(),
            start: store.get(self.start).value.data().to_vec(),
            end: store.get(self.end).value.data().to_vec(),
        }
    }
}

/// Plain values of the CRF parameters, for decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfTables {
    pub transitions: Tensor,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl CrfTables {
    pub fn zeros(classes: usize) -> Self {
        CrfTables {
            transitions: Tensor::zeros(classes, classes),
            start: vec![0.0; classes],
            end: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.start.len()
    }

    /// Score of one path over dense (unmasked) emissions.
    pub fn path_score(&self, emissions: &Tensor, path: &[usize]) -> f64 {
        let mut s = self.start[path[0]] + self.end[path[path.len() - 1]];
        for (t, &y) in path.iter().enumerate() {
            s += emissions.get(t, y);
            if t > 0 {
                s += self.transitions.get(path[t - 1], y);
            }
        }
        s
    }
}

fn check_classes(g: &Graph, emissions: Var, p: &CrfParams) -> Result<(), NnError> {
    let (rows, c) = g.shape(emissions);
    if c != p.classes {
        return Err(NnError::ShapeMismatch {
            op: "crf",
            left: (rows, c),
            right: (p.classes, p.classes),
        });
    }
    Ok(())
}

/// Log partition of every sequence in a right-padded batch. `emissions` is
/// `[T*B x C]` time-major; returns `[B x 1]`.
pub fn log_partition_batch(
    g: &mut Graph,
    store: &ParamStore,
    p: &CrfParams,
    emissions: Var,
    lengths: &[usize],
) -> Result<Var, NnError> {
    check_classes(g, emissions, p)?;
    let batch = lengths.len();
    let steps = lengths.iter().copied().max().unwrap_or(0);
    if batch == 0 || lengths.contains(&0) {
        return Err(NnError::EmptySequence);
    }
    let trans = g.param(store, p.transitions);
    let start = g.param(store, p.start);
    let end = g.param(store, p.end);
    let e0 = g.slice_rows(emissions, 0, batch)?;
    let mut alpha = g.add_row(e0, start)?;
    for t in 1..steps {
        let et = g.slice_rows(emissions, t * batch, batch)?;
        let moved = g.logsumexp_trans(alpha, trans)?;
        let next = g.add(moved, et)?;
        let mask: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
        alpha = if mask.iter().all(|&m| m) {
            next
        } else {
            g.select_rows(&mask, next, alpha)?
        };
    }
    let fin = g.add_row(alpha, end)?;
    Ok(g.logsumexp_rows(fin))
}

/// Sum over the batch of the gold-path scores.
pub fn score_batch(
    g: &mut Graph,
    store: &ParamStore,
    p: &CrfParams,
    emissions: Var,
    tags: &[Vec<usize>],
) -> Result<Var, NnError> {
    check_classes(g, emissions, p)?;
    let batch = tags.len();
    let c = p.classes;
    let mut emit_idx = Vec::new();
    let mut trans_idx = Vec::new();
    let mut start_idx = Vec::new();
    let mut end_idx = Vec::new();
    for (b, seq) in tags.iter().enumerate() {
        if seq.is_empty() {
            return Err(NnError::EmptySequence);
        }
        for (t, &y) in seq.iter().enumerate() {
            if y >= c {
                return Err(NnError::ClassOutOfRange { class: y, classes: c });
            }
            emit_idx.push((t * batch + b) * c + y);
            if t > 0 {
                trans_idx.push(seq[t - 1] * c + y);
            }
        }
        start_idx.push(seq[0]);
        end_idx.push(seq[seq.len() - 1]);
    }
    let trans = g.param(store, p.transitions);
    let start = g.param(store, p.start);
    let end = g.param(store, p.end);
    let mut parts = vec![
        g.gather_elems(emissions, &emit_idx)?,
        g.gather_elems(start, &start_idx)?,
        g.gather_elems(end, &end_idx)?,
    ];
    if !trans_idx.is_empty() {
        parts.push(g.gather_elems(trans, &trans_idx)?);
    }
    let all = g.concat_rows(&parts)?;
    Ok(g.sum(all))
}

/// Mean over the batch of `log Z - score(gold)`.
pub fn neg_log_likelihood_batch(
    g: &mut Graph,
    store: &ParamStore,
    p: &CrfParams,
    emissions: Var,
    tags: &[Vec<usize>],
) -> Result<Var, NnError> {
    let lengths: Vec<usize> = tags.iter().map(Vec::len).collect();
    let log_z = log_partition_batch(g, store, p, emissions, &lengths)?;
    let log_z = g.sum(log_z);
    let gold = score_batch(g, store, p, emissions, tags)?;
    let diff = g.sub(log_z, gold)?;
    Ok(g.scale(diff, 1.0 / tags.len() as f64))
}

fn unmasked(g: &mut Graph, emissions: Var, mask: &[bool]) -> Result<Var, NnError> {
    let rows = g.shape(emissions).0;
    if mask.len() != rows {
        return Err(NnError::ShapeMismatch {
            op: "crf mask",
            left: g.shape(emissions),
            right: (mask.len(), 1),
        });
    }
    if mask.iter().all(|&m| m) {
        return Ok(emissions);
    }
    let keep: Vec<usize> = (0..rows).filter(|&t| mask[t]).collect();
    if keep.is_empty() {
        return Err(NnError::EmptySequence);
    }
    g.gather(emissions, &keep)
}

/// Log partition of one sequence, `emissions: [T x C]`.
pub fn crf_log_partition(
    g: &mut Graph,
    store: &ParamStore,
    p: &CrfParams,
    emissions: Var,
    mask: &[bool],
) -> Result<Var, NnError> {
    let e = unmasked(g, emissions, mask)?;
    let t = g.shape(e).0;
    if t == 0 {
        return Err(NnError::EmptySequence);
    }
    let z = log_partition_batch(g, store, p, e, &[t])?;
    Ok(g.sum(z))
}

/// Score of the tag path over the unmasked steps. `tags` has one entry per
/// step, masked entries are ignored.
pub fn crf_score(
    g: &mut Graph,
    store: &ParamStore,
    p: &CrfParams,
    emissions: Var,
    tags: &[usize],
    mask: &[bool],
) -> Result<Var, NnError> {
    let e = unmasked(g, emissions, mask)?;
    let kept: Vec<usize> = tags.iter().zip(mask).filter(|(_, &m)| m).map(|(&y, _)| y).collect();
    score_batch(g, store, p, e, &[kept])
}

pub fn crf_neg_log_likelihood(
    g: &mut Graph,
    store: &ParamStore,
    p: &CrfParams,
    emissions: Var,
    tags: &[usize],
    mask: &[bool],
) -> Result<Var, NnError> {
    let z = crf_log_partition(g, store, p, emissions, mask)?;
    let s = crf_score(g, store, p, emissions, tags, mask)?;
    g.sub(z, s)
}

/// Best path over the unmasked steps and its score. Ties go to the lower
/// tag id. The returned path has one tag per unmasked step.
pub fn viterbi_decode(
    emissions: &Tensor,
    tables: &CrfTables,
    mask: &[bool],
) -> Result<(Vec<usize>, f64), NnError> {
    let c = tables.classes();
    if emissions.cols() != c || mask.len() != emissions.rows() {
        return Err(NnError::ShapeMismatch {
            op: "viterbi",
            left: emissions.shape(),
            right: (mask.len(), c),
        });
    }
    let steps: Vec<usize> = (0..emissions.rows()).filter(|&t| mask[t]).collect();
    let Some(&first) = steps.first() else {
        return Err(NnError::EmptySequence);
    };
    let mut score: Vec<f64> = (0..c).map(|j| tables.start[j] + emissions.get(first, j)).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(steps.len());
    for &t in &steps[1..] {
        let mut next = vec![0.0; c];
        let mut ptr = vec![0usize; c];
        for j in 0..c {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, s) in score.iter().enumerate() {
                let v = s + tables.transitions.get(i, j);
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + emissions.get(t, j);
            ptr[j] = arg;
        }
        score = next;
        back.push(ptr);
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for j in 0..c {
        let v = score[j] + tables.end[j];
        if v > best {
            best = v;
            last = j;
        }
    }
    let mut path = vec![last; steps.len()];
    for k in (0..back.len()).rev() {
        path[k] = back[k][path[k + 1]];
    }
    Ok((path, best))
}

/// Log partition computed directly on plain values (no graph).
pub fn log_partition_value(emissions: &Tensor, tables: &CrfTables) -> f64 {
    let c = tables.classes();
    let mut alpha: Vec<f64> = (0..c).map(|j| tables.start[j] + emissions.get(0, j)).collect();
    let mut buf = vec![0.0; c];
    for t in 1..emissions.rows() {
        let next: Vec<f64> = (0..c)
            .map(|j| {
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = alpha[i] + tables.transitions.get(i, j);
                }
                logsumexp(&buf) + emissions.get(t, j)
            })
            .collect();
        alpha = next;
    }
    let fin: Vec<f64> = alpha.iter().zip(&tables.end).map(|(a, e)| a + e).collect();
    logsumexp(&fin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn setup(tables: &CrfTables) -> (ParamStore, CrfParams) {
        let mut store = ParamStore::new();
        let p = CrfParams::from_tables(&mut store, tables);
        (store, p)
    }

    fn random_tables(c: usize, r: &mut Rng) -> CrfTables {
        CrfTables {
            transitions: Tensor::uniform(c, c, 2.0, r),
            start: Tensor::uniform(1, c, 2.0, r).into_data(),
            end: Tensor::uniform(1, c, 2.0, r).into_data(),
        }
    }

    #[test]
    fn all_zero_two_by_two_is_log_four() {
        let tables = CrfTables::zeros(2);
        let (store, p) = setup(&tables);
        let mut g = Graph::new();
        let e = g.constant(Tensor::zeros(2, 2));
        let z = crf_log_partition(&mut g, &store, &p, e, &[true, true]).unwrap();
        assert!((g.value(z).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_step_closed_form() {
        let mut r = rng::seeded(1);
        let tables = random_tables(3, &mut r);
        let (store, p) = setup(&tables);
        let em = Tensor::uniform(1, 3, 2.0, &mut r);
        let mut g = Graph::new();
        let e = g.constant(em.clone());
        let z = crf_log_partition(&mut g, &store, &p, e, &[true]).unwrap();
        let terms: Vec<f64> = (0..3).map(|j| tables.start[j] + em.get(0, j) + tables.end[j]).collect();
        assert!((g.value(z).item() - logsumexp(&terms)).abs() < 1e-12);
        let s = crf_score(&mut g, &store, &p, e, &[2], &[true]).unwrap();
        assert!((g.value(s).item() - terms[2]).abs() < 1e-12);
    }

    #[test]
    fn zero_scores_any_path_scores_zero() {
        let (store, p) = setup(&CrfTables::zeros(3));
        let mut g = Graph::new();
        let e = g.constant(Tensor::zeros(3, 3));
        let s = crf_score(&mut g, &store, &p, e, &[0, 2, 1], &[true; 3]).unwrap();
        assert_eq!(g.value(s).item(), 0.0);
    }

    #[test]
    fn single_class_nll_is_zero() {
        let mut r = rng::seeded(2);
        let tables = random_tables(1, &mut r);
        let (store, p) = setup(&tables);
        let mut g = Graph::new();
        let e = g.constant(Tensor::uniform(4, 1, 1.0, &mut r));
        let l = crf_neg_log_likelihood(&mut g, &store, &p, e, &[0; 4], &[true; 4]).unwrap();
        assert!(g.value(l).item().abs() < 1e-12);
        let em = g.value(e).clone();
        assert_eq!(viterbi_decode(&em, &tables, &[true; 4]).unwrap().0, vec![0; 4]);
    }

    #[test]
    fn decoupled_steps_decode_to_argmax() {
        let em = Tensor::from_rows(&[&[0.1, 0.9, 0.3], &[2.0, -1.0, 0.0], &[0.0, 0.0, 5.0]]);
        let (path, score) = viterbi_decode(&em, &CrfTables::zeros(3), &[true; 3]).unwrap();
        assert_eq!(path, vec![1, 0, 2]);
        assert!((score - 7.9).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_lower_tags() {
        let em = Tensor::zeros(3, 4);
        let (path, _) = viterbi_decode(&em, &CrfTables::zeros(4), &[true; 3]).unwrap();
        assert_eq!(path, vec![0, 0, 0]);
    }

    #[test]
    fn empty_sequences_are_rejected() {
        let em = Tensor::zeros(2, 2);
        assert_eq!(
            viterbi_decode(&em, &CrfTables::zeros(2), &[false, false]).unwrap_err(),
            NnError::EmptySequence
        );
    }

    #[test]
    fn out_of_range_tag() {
        let (store, p) = setup(&CrfTables::zeros(2));
        let mut g = Graph::new();
        let e = g.constant(Tensor::zeros(1, 2));
        assert!(matches!(
            crf_score(&mut g, &store, &p, e, &[5], &[true]),
            Err(NnError::ClassOutOfRange { class: 5, classes: 2 })
        ));
    }

    #[test]
    fn plain_and_graph_partitions_agree() {
        let mut r = rng::seeded(3);
        let tables = random_tables(4, &mut r);
        let (store, p) = setup(&tables);
        let em = Tensor::uniform(5, 4, 2.0, &mut r);
        let mut g = Graph::new();
        let e = g.constant(em.clone());
        let z = crf_log_partition(&mut g, &store, &p, e, &[true; 5]).unwrap();
        assert!((g.value(z).item() - log_partition_value(&em, &tables)).abs() < 1e-12);
    }
}
