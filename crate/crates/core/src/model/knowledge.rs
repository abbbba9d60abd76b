//! Bidirectional gated recurrent encoder for injected pseudo-sentences.
//!
//! Knowledge tokens share the model's token embedding table. Each direction
//! runs a GRU over the token sequence; the two hidden states at every
//! position are concatenated and projected back to `d_model`.

use ndarray::{Array1, Array2, Axis};

use super::ops::sigmoid;
use super::params::{GruParams, KnowledgeEncoderParams, Parameters};
use crate::corpus::{tokenize, TokenId, Vocabulary, SEP_ID};
use crate::ontology::PseudoSentence;

/// Encoded knowledge for one injection layer.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeEncoding {
    /// `[n_k, d_model]`, used as both keys and values.
    pub matrix: Array2<f64>,
    /// `false` marks a position that must receive no attention.
    pub mask: Vec<bool>,
}

impl KnowledgeEncoding {
    pub fn empty(d_model: usize) -> Self {
        KnowledgeEncoding {
            matrix: Array2::zeros((0, d_model)),
            mask: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when no position is available for attention.
    pub fn is_void(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }
}

/// Concatenates the sentences as `s1 [SEP] s2 [SEP] ...`, keeping at most
/// `cap` ids.
pub fn knowledge_token_ids(
    sentences: &[PseudoSentence],
    vocab: &Vocabulary,
    cap: usize,
) -> Vec<TokenId> {
    let mut ids = Vec::new();
    for s in sentences {
        ids.extend(tokenize(&s.text).iter().map(|t| vocab.id(t)));
        ids.push(SEP_ID);
    }
    ids.truncate(cap);
    ids
}

#[derive(Clone, Debug)]
pub(crate) struct GruStep {
    h_prev: Array1<f64>,
    z: Array1<f64>,
    r: Array1<f64>,
    cand: Array1<f64>,
    rh: Array1<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderCache {
    ids: Vec<TokenId>,
    x: Array2<f64>,
    fwd: Vec<GruStep>,
    bwd: Vec<GruStep>,
    hcat: Array2<f64>,
}

fn gru_run(x: &Array2<f64>, order: &[usize], p: &GruParams) -> (Array2<f64>, Vec<GruStep>) {
    let hidden = p.b_z.len();
    let mut h = Array1::<f64>::zeros(hidden);
    let mut out = Array2::zeros((x.nrows(), hidden));
    let mut steps = Vec::with_capacity(order.len());
    for &t in order {
        let xt = x.row(t);
        let z = (xt.dot(&p.w_z) + h.dot(&p.u_z) + &p.b_z).mapv(sigmoid);
        let r = (xt.dot(&p.w_r) + h.dot(&p.u_r) + &p.b_r).mapv(sigmoid);
        let rh = &r * &h;
        let cand = (xt.dot(&p.w_h) + rh.dot(&p.u_h) + &p.b_h).mapv(f64::tanh);
        let h_new = &h + &(&z * &(&cand - &h));
        out.row_mut(t).assign(&h_new);
        steps.push(GruStep {
            h_prev: std::mem::replace(&mut h, h_new),
            z,
            r,
            cand,
            rh,
        });
    }
    (out, steps)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

fn gru_backward(
    x: &Array2<f64>,
    order: &[usize],
    p: &GruParams,
    steps: &[GruStep],
    dout: &Array2<f64>,
    g: &mut GruParams,
    dx: &mut Array2<f64>,
) {
    let hidden = p.b_z.len();
    let mut dh_next = Array1::<f64>::zeros(hidden);
    for (k, &t) in order.iter().enumerate().rev() {
        let s = &steps[k];
        let xt = x.row(t).to_owned();
        let dh = &dout.row(t) + &dh_next;

        let dcand = &dh * &s.z;
        let dz = &dh * &(&s.cand - &s.h_prev);
        let mut dh_prev = &dh * &s.z.mapv(|z| 1.0 - z);

        let da_h = &dcand * &s.cand.mapv(|c| 1.0 - c * c);
        g.w_h += &outer(&xt, &da_h);
        g.u_h += &outer(&s.rh, &da_h);
        g.b_h += &da_h;
        let drh = p.u_h.dot(&da_h);
        let dr = &drh * &s.h_prev;
        dh_prev += &(&drh * &s.r);

        let da_z = &dz * &s.z.mapv(|z| z * (1.0 - z));
        let da_r = &dr * &s.r.mapv(|r| r * (1.0 - r));
        g.w_z += &outer(&xt, &da_z);
        g.u_z += &outer(&s.h_prev, &da_z);
        g.b_z += &da_z;
        g.w_r += &outer(&xt, &da_r);
        g.u_r += &outer(&s.h_prev, &da_r);
        g.b_r += &da_r;
        dh_prev += &p.u_z.dot(&da_z);
        dh_prev += &p.u_r.dot(&da_r);

        let dxt = p.w_z.dot(&da_z) + p.w_r.dot(&da_r) + p.w_h.dot(&da_h);
        let mut row = dx.row_mut(t);
        row += &dxt;
        dh_next = dh_prev;
    }
}

fn encoder(params: &Parameters) -> &KnowledgeEncoderParams {
    params
        .knowledge
        .as_ref()
        .expect("knowledge encoder present when injecting")
}

pub(crate) fn encode(ids: &[TokenId], params: &Parameters) -> (KnowledgeEncoding, EncoderCache) {
    let d = params.tok_emb.ncols();
    let n = ids.len();
    let x = params.tok_emb.select(Axis(0), ids);
    if n == 0 || params.knowledge.is_none() {
        let cache = EncoderCache {
            ids: ids.to_vec(),
            x,
            fwd: Vec::new(),
            bwd: Vec::new(),
            hcat: Array2::zeros((0, 0)),
        };
        return (KnowledgeEncoding::empty(d), cache);
    }
    let enc = encoder(params);
    let forward_order: Vec<usize> = (0..n).collect();
    let backward_order: Vec<usize> = (0..n).rev().collect();
    let (hf, fwd) = gru_run(&x, &forward_order, &enc.fwd);
    let (hb, bwd) = gru_run(&x, &backward_order, &enc.bwd);
    let hcat = ndarray::concatenate(Axis(1), &[hf.view(), hb.view()]).expect("same rows");
    let matrix = hcat.dot(&enc.proj) + &enc.proj_b;
    (
        KnowledgeEncoding {
            matrix,
            mask: vec![true; n],
        },
        EncoderCache {
            ids: ids.to_vec(),
            x,
            fwd,
            bwd,
            hcat,
        },
    )
}

pub(crate) fn encode_backward(
    dmatrix: &Array2<f64>,
    cache: &EncoderCache,
    params: &Parameters,
    grads: &mut Parameters,
) {
    let n = cache.ids.len();
    if n == 0 || params.knowledge.is_none() {
        return;
    }
    let enc = encoder(params);
    let g = grads.knowledge.as_mut().expect("gradient has encoder");
    g.proj += &cache.hcat.t().dot(dmatrix);
    g.proj_b += &dmatrix.sum_axis(Axis(0));
    let dhcat = dmatrix.dot(&enc.proj.t());
    let hidden = enc.fwd.b_z.len();
    let dhf = dhcat.slice(ndarray::s![.., ..hidden]).to_owned();
    let dhb = dhcat.slice(ndarray::s![.., hidden..]).to_owned();

    let mut dx = Array2::zeros(cache.x.raw_dim());
    let forward_order: Vec<usize> = (0..n).collect();
    let backward_order: Vec<usize> = (0..n).rev().collect();
    gru_backward(&cache.x, &forward_order, &enc.fwd, &cache.fwd, &dhf, &mut g.fwd, &mut dx);
    gru_backward(&cache.x, &backward_order, &enc.bwd, &cache.bwd, &dhb, &mut g.bwd, &mut dx);
    for (row, &id) in dx.rows().into_iter().zip(&cache.ids) {
        let mut target = grads.tok_emb.row_mut(id);
        target += &row;
    }
}

/// Concatenated `[forward, backward]` hidden states, before projection.
pub fn bidirectional_states(ids: &[TokenId], params: &Parameters) -> Array2<f64> {
    encode(ids, params).1.hcat
}

/// Encodes a pseudo-sentence list for one layer.
pub fn encode_knowledge(
    sentences: &[PseudoSentence],
    vocab: &Vocabulary,
    params: &Parameters,
    cap: usize,
) -> KnowledgeEncoding {
    let ids = knowledge_token_ids(sentences, vocab, cap);
    encode(&ids, params).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> Parameters {
        let config = ModelConfig {
            depth: 1,
            d_model: 6,
            heads: 2,
            d_ffn: 4,
            max_len: 8,
            vocab_size: 10,
            injection_layers: vec![1],
            knowledge_hidden: 3,
            ..ModelConfig::default()
        };
        Parameters::init(&config, &mut ChaCha8Rng::seed_from_u64(5))
    }

    #[test]
    fn empty_input_gives_empty_encoding() {
        let p = params();
        let (e, _) = encode(&[], &p);
        assert_eq!(e.len(), 0);
        assert_eq!(e.matrix.ncols(), 6);
        assert!(e.is_void());
    }

    #[test]
    fn output_shape() {
        let p = params();
        let (e, _) = encode(&[4, 5, 6], &p);
        assert_eq!(e.matrix.dim(), (3, 6));
        assert_eq!(e.mask, vec![true; 3]);
    }

    #[test]
    fn reversal_swaps_direction_halves() {
        let mut p = params();
        let k = p.knowledge.as_mut().unwrap();
        k.bwd = k.fwd.clone();
        let ab = bidirectional_states(&[4, 7], &p);
        let ba = bidirectional_states(&[7, 4], &p);
        let h = 3;
        for t in 0..2 {
            for j in 0..h {
                assert_eq!(ab[[t, j]], ba[[1 - t, h + j]]);
                assert_eq!(ab[[t, h + j]], ba[[1 - t, j]]);
            }
        }
    }

    #[test]
    fn token_ids_respect_cap() {
        let vocab = Vocabulary::build(["a is subclass of b"], 1);
        let s = PseudoSentence {
            text: "a is subclass of b".into(),
            hop: 1,
            sources: vec![],
        };
        let ids = knowledge_token_ids(&[s.clone(), s.clone()], &vocab, 100);
        assert_eq!(ids.len(), 12);
        assert_eq!(ids[5], SEP_ID);
        assert_eq!(knowledge_token_ids(&[s.clone(), s], &vocab, 7).len(), 7);
    }
}
