//! Seq2seq transformer forward pass, loss and exact gradients.
//!
//! Layout: source and target share one pre-norm encoder stack under a
//! seq2seq mask. The state at source position `src_len - 1 + i` predicts
//! target token `i`, so every target prediction sees the whole source and
//! the target prefix before it. After a configured layer's feed-forward
//! block, knowledge is injected as
//! `LayerNorm(softmax(H K^T / sqrt(d) + M) V W + H)`.

use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::{s, Array1, Array2, Axis};

use super::knowledge::{self, EncoderCache, KnowledgeEncoding};
use super::ops::{
    columns, gelu, gelu_grad, layer_norm, layer_norm_backward, log_sum_exp, masked_softmax,
    sigmoid, softmax, softmax_backward, softplus, LayerNormCache,
};
use super::params::{InjectionParams, Parameters};
use super::ModelConfig;
use crate::corpus::{EncodedPair, TokenId, PAD_ID};
use crate::{Error, Result};

/// Token ids of the knowledge text per 1-based layer.
pub type LayerKnowledge = BTreeMap<usize, Vec<TokenId>>;

/// Seq2seq attention mask: `mask[i][j]` is true when row `i` may attend to
/// column `j`.
pub fn seq2seq_mask(src_len: usize, tgt_len: usize) -> Array2<bool> {
    let n = src_len + tgt_len;
    Array2::from_shape_fn((n, n), |(i, j)| j < src_len || (i >= src_len && j <= i))
}

fn allowed(src_len: usize, i: usize, j: usize) -> bool {
    j < src_len || (i >= src_len && j <= i)
}

/// Sum of token, position and segment embeddings.
pub fn embed_input(pair: &EncodedPair, params: &Parameters) -> Result<Array2<f64>> {
    let ids = pair.input_ids();
    let vocab = params.tok_emb.nrows();
    let max_len = params.pos_emb.nrows();
    if ids.len() != pair.segments.len() || ids.len() != pair.positions.len() {
        return Err(Error::Shape(format!(
            "{} ids, {} segments, {} positions",
            ids.len(),
            pair.segments.len(),
            pair.positions.len()
        )));
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: vocab,
        });
    }
    if let Some(&p) = pair.positions.iter().find(|&&p| p >= max_len) {
        return Err(Error::Shape(format!("position {p} exceeds max_len {max_len}")));
    }
    if pair.segments.iter().any(|&s| s > 1) {
        return Err(Error::Shape("segment id must be 0 or 1".into()));
    }
    let d = params.tok_emb.ncols();
    let mut x = Array2::zeros((ids.len(), d));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        row += &params.tok_emb.row(ids[i]);
        row += &params.pos_emb.row(pair.positions[i]);
        row += &params.seg_emb.row(pair.segments[i] as usize);
    }
    Ok(x)
}

#[derive(Clone, Debug)]
struct InjectionCache {
    weights: Array2<f64>,
    context: Array2<f64>,
    ln: LayerNormCache,
}

/// Knowledge attention sublayer. Returns the new hidden states and, when
/// knowledge is present, the cache holding the attention weights.
fn inject(
    h: &Array2<f64>,
    ke: &KnowledgeEncoding,
    p: &InjectionParams,
) -> (Array2<f64>, Option<InjectionCache>) {
    if ke.is_empty() || ke.is_void() {
        return (h.clone(), None);
    }
    let d = h.ncols() as f64;
    let scores = h.dot(&ke.matrix.t()) / d.sqrt();
    let weights = masked_softmax(&scores, |_, j| ke.mask[j]);
    let context = weights.dot(&ke.matrix);
    let u = context.dot(&p.w) + h;
    let (out, ln) = layer_norm(&u, &p.ln_g, &p.ln_b);
    (
        out,
        Some(InjectionCache {
            weights,
            context,
            ln,
        }),
    )
}

/// Applies one injection sublayer; empty knowledge is the identity.
/// The second value holds the `[n, n_k]` attention weights.
pub fn inject_knowledge(
    h: &Array2<f64>,
    ke: &KnowledgeEncoding,
    p: &InjectionParams,
) -> (Array2<f64>, Option<Array2<f64>>) {
    let (out, cache) = inject(h, ke, p);
    (out, cache.map(|c| c.weights))
}

#[derive(Clone, Debug)]
struct LayerCache {
    ln1: LayerNormCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln2: LayerNormCache,
    b: Array2<f64>,
    h1: Array2<f64>,
    g: Array2<f64>,
    x2: Array2<f64>,
    injection: Option<InjectionCache>,
    out: Array2<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    ids: Vec<TokenId>,
    positions: Vec<usize>,
    segments: Vec<u8>,
    rows: Range<usize>,
    layers: Vec<LayerCache>,
    lnf: LayerNormCache,
    states: Array2<f64>,
    encodings: BTreeMap<usize, KnowledgeEncoding>,
    encoder_caches: BTreeMap<usize, EncoderCache>,
}

impl ForwardTrace {
    /// Per-head self-attention weights of a 1-based layer.
    pub fn attention_weights(&self, layer: usize) -> &[Array2<f64>] {
        &self.layers[layer - 1].probs
    }

    /// Knowledge attention weights of a 1-based layer, if it injected.
    pub fn injection_weights(&self, layer: usize) -> Option<&Array2<f64>> {
        self.layers[layer - 1]
            .injection
            .as_ref()
            .map(|c| &c.weights)
    }

    /// Output of a 1-based layer, after any injection.
    pub fn layer_output(&self, layer: usize) -> &Array2<f64> {
        &self.layers[layer - 1].out
    }

    /// Final-norm states at every position.
    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }
}

/// Model heads evaluated at the target prediction rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// `[n_tgt, vocab]`
    pub lm_logits: Array2<f64>,
    /// `[n_tgt]`
    pub copy_logits: Array1<f64>,
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl Model {
    pub fn new(config: ModelConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        let expected = Parameters::zeros(&config);
        let shapes = |p: &Parameters| -> Vec<(String, Vec<usize>)> {
            p.named()
                .into_iter()
                .map(|(n, t)| (n, t.shape().to_vec()))
                .collect()
        };
        if shapes(&expected) != shapes(&params) {
            return Err(Error::Shape("parameters do not match config".into()));
        }
        Ok(Model { config, params })
    }

    /// Encodes every layer's knowledge with the current parameters.
    pub fn encode_knowledge(&self, knowledge: &LayerKnowledge) -> BTreeMap<usize, KnowledgeEncoding> {
        self.config
            .injection_layers
            .iter()
            .map(|&l| {
                let ids = knowledge.get(&l).map(Vec::as_slice).unwrap_or(&[]);
                (l, knowledge::encode(ids, &self.params).0)
            })
            .collect()
    }

    /// Training forward: heads at the rows predicting each target token.
    pub fn forward(
        &self,
        pair: &EncodedPair,
        knowledge: &LayerKnowledge,
    ) -> Result<(ForwardOutput, ForwardTrace)> {
        let mut encodings = BTreeMap::new();
        let mut caches = BTreeMap::new();
        let vocab_size = self.params.tok_emb.nrows();
        for &l in &self.config.injection_layers {
            let ids = knowledge.get(&l).map(Vec::as_slice).unwrap_or(&[]);
            if let Some(&id) = ids.iter().find(|&&id| id >= vocab_size) {
                return Err(Error::TokenOutOfRange { id, vocab_size });
            }
            let (e, c) = knowledge::encode(ids, &self.params);
            encodings.insert(l, e);
            caches.insert(l, c);
        }
        if pair.src_ids.is_empty() {
            return Err(Error::Shape("empty source".into()));
        }
        let rows = pair.src_ids.len() - 1..pair.src_ids.len() - 1 + pair.tgt_ids.len();
        self.run(pair, encodings, caches, rows)
    }

    /// Heads at the final position only, for step-wise decoding with
    /// pre-encoded knowledge.
    pub fn next_token_logits(
        &self,
        pair: &EncodedPair,
        encodings: &BTreeMap<usize, KnowledgeEncoding>,
    ) -> Result<(Array1<f64>, f64)> {
        let n = pair.len();
        let (out, _) = self.run(pair, encodings.clone(), BTreeMap::new(), n - 1..n)?;
        Ok((out.lm_logits.row(0).to_owned(), out.copy_logits[0]))
    }

    /// Next-token distribution and copy probability at the final position.
    pub fn next_token_distribution(
        &self,
        pair: &EncodedPair,
        encodings: &BTreeMap<usize, KnowledgeEncoding>,
    ) -> Result<(Array1<f64>, f64)> {
        let (logits, copy) = self.next_token_logits(pair, encodings)?;
        Ok((softmax(logits.view()), sigmoid(copy)))
    }

    fn run(
        &self,
        pair: &EncodedPair,
        encodings: BTreeMap<usize, KnowledgeEncoding>,
        encoder_caches: BTreeMap<usize, EncoderCache>,
        rows: Range<usize>,
    ) -> Result<(ForwardOutput, ForwardTrace)> {
        let config = &self.config;
        let p = &self.params;
        let mut x = embed_input(pair, p)?;
        let src_len = pair.src_ids.len();
        let dh = config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut layers = Vec::with_capacity(config.depth);
        for (l, lp) in p.layers.iter().enumerate() {
            let (a, ln1) = layer_norm(&x, &lp.ln1_g, &lp.ln1_b);
            let q = a.dot(&lp.wq);
            let k = a.dot(&lp.wk);
            let v = a.dot(&lp.wv);
            let mut ctx = Array2::zeros(x.raw_dim());
            let mut probs = Vec::with_capacity(config.heads);
            for h in 0..config.heads {
                let qh = columns(&q, h * dh, dh);
                let kh = columns(&k, h * dh, dh);
                let vh = columns(&v, h * dh, dh);
                let scores = qh.dot(&kh.t()) * scale;
                let ph = masked_softmax(&scores, |i, j| allowed(src_len, i, j));
                ctx.slice_mut(s![.., h * dh..(h + 1) * dh])
                    .assign(&ph.dot(&vh));
                probs.push(ph);
            }
            let x1 = &x + &ctx.dot(&lp.wo);
            let (b, ln2) = layer_norm(&x1, &lp.ln2_g, &lp.ln2_b);
            let h1 = b.dot(&lp.w1) + &lp.b1;
            let g = h1.mapv(gelu);
            let x2 = &x1 + &(g.dot(&lp.w2) + &lp.b2);

            let layer_no = l + 1;
            let (x_out, injection) = match (p.injections.get(&layer_no), encodings.get(&layer_no)) {
                (Some(ip), Some(ke)) => inject(&x2, ke, ip),
                _ => (x2.clone(), None),
            };
            x = x_out.clone();
            layers.push(LayerCache {
                out: x_out,
                ln1,
                a,
                q,
                k,
                v,
                probs,
                ctx,
                ln2,
                b,
                h1,
                g,
                x2,
                injection,
            });
        }
        let (states, lnf) = layer_norm(&x, &p.lnf_g, &p.lnf_b);
        if rows.end > states.nrows() {
            return Err(Error::Shape("prediction rows beyond sequence".into()));
        }
        let pred = states.slice(s![rows.clone(), ..]);
        let lm_logits = pred.dot(&p.tok_emb.t());
        let copy_logits = pred.dot(&p.copy_w) + p.copy_b[0];
        let trace = ForwardTrace {
            ids: pair.input_ids(),
            positions: pair.positions.clone(),
            segments: pair.segments.clone(),
            rows,
            layers,
            lnf,
            states,
            encodings,
            encoder_caches,
        };
        Ok((
            ForwardOutput {
                lm_logits,
                copy_logits,
            },
            trace,
        ))
    }

    /// Loss and exact gradients for one example.
    pub fn gradients(
        &self,
        output: &ForwardOutput,
        trace: &ForwardTrace,
        tgt_ids: &[TokenId],
        copy_labels: &[bool],
        copy_weight: f64,
    ) -> (f64, Parameters) {
        let config = &self.config;
        let p = &self.params;
        let mut grads = p.zeros_like();
        let loss = loss(
            &output.lm_logits,
            &output.copy_logits,
            tgt_ids,
            copy_labels,
            copy_weight,
        );
        let (dlogits, dcopy) = loss_backward(
            &output.lm_logits,
            &output.copy_logits,
            tgt_ids,
            copy_labels,
            copy_weight,
        );

        // Heads.
        let pred = trace.states.slice(s![trace.rows.clone(), ..]).to_owned();
        grads.tok_emb += &dlogits.t().dot(&pred);
        grads.copy_w += &pred.t().dot(&dcopy);
        grads.copy_b[0] += dcopy.sum();
        let dpred = dlogits.dot(&p.tok_emb)
            + &dcopy
                .view()
                .insert_axis(Axis(1))
                .dot(&p.copy_w.view().insert_axis(Axis(0)));
        let mut dstates = Array2::zeros(trace.states.raw_dim());
        dstates.slice_mut(s![trace.rows.clone(), ..]).assign(&dpred);

        let (mut dx, dg, db) = layer_norm_backward(&dstates, &trace.lnf, &p.lnf_g);
        grads.lnf_g += &dg;
        grads.lnf_b += &db;

        let dh = config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dknowledge: BTreeMap<usize, Array2<f64>> = BTreeMap::new();

        for l in (0..config.depth).rev() {
            let lp = &p.layers[l];
            let c = &trace.layers[l];
            let layer_no = l + 1;

            // Injection sublayer.
            let mut dx2 = dx;
            if let Some(ic) = &c.injection {
                let ip = &p.injections[&layer_no];
                let ke = &trace.encodings[&layer_no];
                let (du, dg, db) = layer_norm_backward(&dx2, &ic.ln, &ip.ln_g);
                let gi = grads.injections.get_mut(&layer_no).expect("injection grads");
                gi.ln_g += &dg;
                gi.ln_b += &db;
                gi.w += &ic.context.t().dot(&du);
                let dctx = du.dot(&ip.w.t());
                let dweights = dctx.dot(&ke.matrix.t());
                let mut dkv = ic.weights.t().dot(&dctx);
                let dscores = softmax_backward(&ic.weights, &dweights) / (c.x2.ncols() as f64).sqrt();
                dkv += &dscores.t().dot(&c.x2);
                dx2 = du + dscores.dot(&ke.matrix);
                dknowledge.insert(layer_no, dkv);
            }

            // Feed-forward block.
            let gl = &mut grads.layers[l];
            gl.w2 += &c.g.t().dot(&dx2);
            gl.b2 += &dx2.sum_axis(Axis(0));
            let dgel = dx2.dot(&lp.w2.t());
            let dh1 = &dgel * &c.h1.mapv(gelu_grad);
            gl.w1 += &c.b.t().dot(&dh1);
            gl.b1 += &dh1.sum_axis(Axis(0));
            let dbn = dh1.dot(&lp.w1.t());
            let (dx1_ln, dg2, db2) = layer_norm_backward(&dbn, &c.ln2, &lp.ln2_g);
            gl.ln2_g += &dg2;
            gl.ln2_b += &db2;
            let dx1 = dx2 + dx1_ln;

            // Self-attention block.
            gl.wo += &c.ctx.t().dot(&dx1);
            let dctx = dx1.dot(&lp.wo.t());
            let mut dq = Array2::zeros(c.q.raw_dim());
            let mut dk = Array2::zeros(c.k.raw_dim());
            let mut dv = Array2::zeros(c.v.raw_dim());
            for h in 0..config.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let ph = &c.probs[h];
                let dctx_h = dctx.slice(cols);
                let vh = c.v.slice(cols);
                let dp = dctx_h.dot(&vh.t());
                dv.slice_mut(cols).assign(&ph.t().dot(&dctx_h));
                let ds = softmax_backward(ph, &dp) * scale;
                dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
            }
            gl.wq += &c.a.t().dot(&dq);
            gl.wk += &c.a.t().dot(&dk);
            gl.wv += &c.a.t().dot(&dv);
            let da = dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
            let (dx_ln, dg1, db1) = layer_norm_backward(&da, &c.ln1, &lp.ln1_g);
            gl.ln1_g += &dg1;
            gl.ln1_b += &db1;
            dx = dx1 + dx_ln;
        }

        // Embeddings.
        for (i, row) in dx.rows().into_iter().enumerate() {
            let mut t = grads.tok_emb.row_mut(trace.ids[i]);
            t += &row;
            let mut pe = grads.pos_emb.row_mut(trace.positions[i]);
            pe += &row;
            let mut se = grads.seg_emb.row_mut(trace.segments[i] as usize);
            se += &row;
        }

        // Knowledge encoder.
        for (layer, dmatrix) in &dknowledge {
            if let Some(cache) = trace.encoder_caches.get(layer) {
                knowledge::encode_backward(dmatrix, cache, p, &mut grads);
            }
        }
        (loss, grads)
    }

    /// Forward plus loss, without gradients.
    pub fn loss_on(&self, pair: &EncodedPair, knowledge: &LayerKnowledge, copy_weight: f64) -> Result<f64> {
        let (out, _) = self.forward(pair, knowledge)?;
        Ok(loss(
            &out.lm_logits,
            &out.copy_logits,
            &pair.tgt_ids,
            &pair.copy_labels,
            copy_weight,
        ))
    }

    /// Loss and gradients for one example.
    pub fn loss_and_gradients(
        &self,
        pair: &EncodedPair,
        knowledge: &LayerKnowledge,
        copy_weight: f64,
    ) -> Result<(f64, Parameters)> {
        let (out, trace) = self.forward(pair, knowledge)?;
        Ok(self.gradients(&out, &trace, &pair.tgt_ids, &pair.copy_labels, copy_weight))
    }

    /// Fraction of non-pad target positions whose argmax prediction is
    /// correct under teacher forcing, as `(correct, total)`.
    pub fn teacher_forced_hits(&self, pair: &EncodedPair, knowledge: &LayerKnowledge) -> Result<(usize, usize)> {
        let (out, _) = self.forward(pair, knowledge)?;
        let mut correct = 0;
        let mut total = 0;
        for (row, &t) in out.lm_logits.rows().into_iter().zip(&pair.tgt_ids) {
            if t == PAD_ID {
                continue;
            }
            total += 1;
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            if best == t {
                correct += 1;
            }
        }
        Ok((correct, total))
    }
}

/// Mean token cross-entropy plus `copy_weight` times mean binary
/// cross-entropy of the copy head, over non-pad target positions.
pub fn loss(
    lm_logits: &Array2<f64>,
    copy_logits: &Array1<f64>,
    tgt_ids: &[TokenId],
    copy_labels: &[bool],
    copy_weight: f64,
) -> f64 {
    let mut ce = 0.0;
    let mut bce = 0.0;
    let mut count = 0usize;
    for (i, &t) in tgt_ids.iter().enumerate() {
        if t == PAD_ID {
            continue;
        }
        count += 1;
        let row = lm_logits.row(i);
        ce += log_sum_exp(row) - row[t];
        if copy_weight != 0.0 {
            let z = copy_logits[i];
            bce += if copy_labels[i] { softplus(-z) } else { softplus(z) };
        }
    }
    if count == 0 {
        return 0.0;
    }
    let n = count as f64;
    ce / n + if copy_weight != 0.0 { copy_weight * bce / n } else { 0.0 }
}

fn loss_backward(
    lm_logits: &Array2<f64>,
    copy_logits: &Array1<f64>,
    tgt_ids: &[TokenId],
    copy_labels: &[bool],
    copy_weight: f64,
) -> (Array2<f64>, Array1<f64>) {
    let mut dlogits = Array2::zeros(lm_logits.raw_dim());
    let mut dcopy = Array1::zeros(copy_logits.len());
    let count = tgt_ids.iter().filter(|&&t| t != PAD_ID).count();
    if count == 0 {
        return (dlogits, dcopy);
    }
    let n = count as f64;
    for (i, &t) in tgt_ids.iter().enumerate() {
        if t == PAD_ID {
            continue;
        }
        let mut probs = softmax(lm_logits.row(i));
        probs[t] -= 1.0;
        dlogits.row_mut(i).assign(&(probs / n));
        if copy_weight != 0.0 {
            let y = if copy_labels[i] { 1.0 } else { 0.0 };
            dcopy[i] = copy_weight * (sigmoid(copy_logits[i]) - y) / n;
        }
    }
    (dlogits, dcopy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mask_layout() {
        let m = seq2seq_mask(2, 2);
        let rows: Vec<Vec<usize>> = m
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().filter(|(_, &a)| a).map(|(j, _)| j).collect())
            .collect();
        assert_eq!(rows, vec![vec![0, 1], vec![0, 1], vec![0, 1, 2], vec![0, 1, 2, 3]]);
        assert!(seq2seq_mask(3, 0).iter().all(|&a| a));
        let m = seq2seq_mask(1, 4);
        for i in 1..5 {
            for j in 1..5 {
                assert_eq!(m[[i, j]], j <= i);
            }
        }
    }

    #[test]
    fn loss_values() {
        // perfect prediction: huge margin on the right token and label
        let lm = array![[50.0, -50.0, -50.0], [-50.0, 50.0, -50.0]];
        let copy = array![60.0, -60.0];
        let l = loss(&lm, &copy, &[0, 1], &[true, false], 1.0);
        assert!(l < 1e-20);

        let uniform = Array2::zeros((3, 4));
        let l = loss(&uniform, &array![9.0, -3.0, 0.2], &[1, 2, 3], &[true, true, false], 0.0);
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let l2 = loss(&uniform, &array![-7.0, 1.0, 5.0], &[1, 2, 3], &[true, true, false], 0.0);
        assert_eq!(l, l2);
    }

    #[test]
    fn pad_positions_are_ignored() {
        let lm = array![[0.0, 1.0, 2.0, 3.0], [5.0, 0.0, 0.0, 0.0]];
        let copy = array![0.3, 4.0];
        let with_pad = loss(&lm, &copy, &[2, PAD_ID], &[false, true], 1.0);
        let single = loss(
            &lm.slice(s![0..1, ..]).to_owned(),
            &array![0.3],
            &[2],
            &[false],
            1.0,
        );
        assert_eq!(with_pad, single);
    }
}
