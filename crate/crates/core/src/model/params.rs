//! Learnable tensors, addressed by stable dotted names so that the
//! optimizer, the checkpoint format and gradient checks can walk them
//! uniformly.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Zip};
use rand::Rng;

use super::ModelConfig;

macro_rules! tensor_group {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl $ty {
            fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
                $( out.push((format!("{prefix}{}", stringify!($field)), self.$field.view().into_dyn())); )*
            }

            fn collect_mut<'a>(
                &'a mut self,
                prefix: &str,
                out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>,
            ) {
                $( out.push((format!("{prefix}{}", stringify!($field)), self.$field.view_mut().into_dyn())); )*
            }
        }
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}
tensor_group!(LayerParams { ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2 });

/// Projection and normalization of one knowledge-injection sublayer.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionParams {
    pub w: Array2<f64>,
    pub ln_g: Array1<f64>,
    pub ln_b: Array1<f64>,
}
tensor_group!(InjectionParams { w, ln_g, ln_b });

/// Gated recurrent cell; input weights are `[d_in, hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_z: Array1<f64>,
    pub b_r: Array1<f64>,
    pub b_h: Array1<f64>,
}
tensor_group!(GruParams { w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h });

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeEncoderParams {
    pub fwd: GruParams,
    pub bwd: GruParams,
    /// `[2 * hidden, d_model]`
    pub proj: Array2<f64>,
    pub proj_b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub seg_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    /// Keyed by 1-based layer index.
    pub injections: BTreeMap<usize, InjectionParams>,
    /// Absent when no layer receives knowledge.
    pub knowledge: Option<KnowledgeEncoderParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub copy_w: Array1<f64>,
    pub copy_b: Array1<f64>,
}

fn gru_zeros(d_in: usize, hidden: usize) -> GruParams {
    GruParams {
        w_z: Array2::zeros((d_in, hidden)),
        w_r: Array2::zeros((d_in, hidden)),
        w_h: Array2::zeros((d_in, hidden)),
        u_z: Array2::zeros((hidden, hidden)),
        u_r: Array2::zeros((hidden, hidden)),
        u_h: Array2::zeros((hidden, hidden)),
        b_z: Array1::zeros(hidden),
        b_r: Array1::zeros(hidden),
        b_h: Array1::zeros(hidden),
    }
}

impl Parameters {
    /// All-zero tensors with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let f = config.d_ffn;
        let layer = || LayerParams {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w1: Array2::zeros((d, f)),
            b1: Array1::zeros(f),
            w2: Array2::zeros((f, d)),
            b2: Array1::zeros(d),
        };
        let injections = config
            .injection_layers
            .iter()
            .map(|&l| {
                (
                    l,
                    InjectionParams {
                        w: Array2::zeros((d, d)),
                        ln_g: Array1::zeros(d),
                        ln_b: Array1::zeros(d),
                    },
                )
            })
            .collect();
        let hk = config.knowledge_hidden;
        let knowledge = (!config.injection_layers.is_empty()).then(|| KnowledgeEncoderParams {
            fwd: gru_zeros(d, hk),
            bwd: gru_zeros(d, hk),
            proj: Array2::zeros((2 * hk, d)),
            proj_b: Array1::zeros(d),
        });
        Parameters {
            tok_emb: Array2::zeros((config.vocab_size, d)),
            pos_emb: Array2::zeros((config.max_len, d)),
            seg_emb: Array2::zeros((2, d)),
            layers: (0..config.depth).map(|_| layer()).collect(),
            injections,
            knowledge,
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            copy_w: Array1::zeros(d),
            copy_b: Array1::zeros(1),
        }
    }

    /// Uniform(-0.05, 0.05) weights, unit layer-norm gains, zero biases.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut params = Parameters::zeros(config);
        for (name, mut tensor) in params.named_mut() {
            let field = name.rsplit('.').next().unwrap_or(&name);
            if field.ends_with("_g") {
                tensor.fill(1.0);
            } else if field.starts_with('b') || field.ends_with("_b") {
                tensor.fill(0.0);
            } else {
                tensor.map_inplace(|v| *v = rng.gen_range(-0.05..0.05));
            }
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, mut t) in out.named_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn named(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view().into_dyn()),
            ("seg_emb".to_string(), self.seg_emb.view().into_dyn()),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect(&format!("layers.{i}."), &mut out);
        }
        for (l, inj) in &self.injections {
            inj.collect(&format!("injection.{l}."), &mut out);
        }
        if let Some(k) = &self.knowledge {
            k.fwd.collect("knowledge.fwd.", &mut out);
            k.bwd.collect("knowledge.bwd.", &mut out);
            out.push(("knowledge.proj".into(), k.proj.view().into_dyn()));
            out.push(("knowledge.proj_b".into(), k.proj_b.view().into_dyn()));
        }
        out.push(("lnf_g".into(), self.lnf_g.view().into_dyn()));
        out.push(("lnf_b".into(), self.lnf_b.view().into_dyn()));
        out.push(("copy_w".into(), self.copy_w.view().into_dyn()));
        out.push(("copy_b".into(), self.copy_b.view().into_dyn()));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view_mut().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view_mut().into_dyn()),
            ("seg_emb".to_string(), self.seg_emb.view_mut().into_dyn()),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.collect_mut(&format!("layers.{i}."), &mut out);
        }
        for (l, inj) in self.injections.iter_mut() {
            inj.collect_mut(&format!("injection.{l}."), &mut out);
        }
        if let Some(k) = &mut self.knowledge {
            k.fwd.collect_mut("knowledge.fwd.", &mut out);
            k.bwd.collect_mut("knowledge.bwd.", &mut out);
            out.push(("knowledge.proj".into(), k.proj.view_mut().into_dyn()));
            out.push(("knowledge.proj_b".into(), k.proj_b.view_mut().into_dyn()));
        }
        out.push(("lnf_g".into(), self.lnf_g.view_mut().into_dyn()));
        out.push(("lnf_b".into(), self.lnf_b.view_mut().into_dyn()));
        out.push(("copy_w".into(), self.copy_w.view_mut().into_dyn()));
        out.push(("copy_b".into(), self.copy_b.view_mut().into_dyn()));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        let theirs = other.named();
        for ((_, mut mine), (_, t)) in self.named_mut().into_iter().zip(theirs) {
            Zip::from(&mut mine).and(&t).for_each(|a, &b| *a += scale * b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> ModelConfig {
        ModelConfig {
            depth: 2,
            d_model: 8,
            heads: 2,
            d_ffn: 16,
            max_len: 16,
            vocab_size: 20,
            injection_layers: vec![2],
            knowledge_hidden: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn names_are_unique_and_stable() {
        let p = Parameters::zeros(&config());
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert!(names.contains(&"injection.2.w".to_string()));
        assert!(names.contains(&"knowledge.bwd.u_h".to_string()));
        let mut q = p.clone();
        let mut_names: Vec<String> = q.named_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn init_rules() {
        let p = Parameters::init(&config(), &mut ChaCha8Rng::seed_from_u64(1));
        assert!(p.lnf_g.iter().all(|&v| v == 1.0));
        assert!(p.layers[0].b1.iter().all(|&v| v == 0.0));
        assert!(p.tok_emb.iter().all(|&v| v.abs() < 0.05));
        assert!(p.tok_emb.iter().any(|&v| v != 0.0));
        let k = p.knowledge.as_ref().unwrap();
        assert!(k.fwd.b_z.iter().all(|&v| v == 0.0));
        assert!(k.proj_b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_injection_means_no_injection_tensors() {
        let mut c = config();
        c.injection_layers.clear();
        let p = Parameters::zeros(&c);
        assert!(p.knowledge.is_none());
        assert!(p
            .named()
            .iter()
            .all(|(n, _)| !n.starts_with("injection") && !n.starts_with("knowledge")));
    }
}
