//! Encoder-decoder transformer.
//!
//! Both stacks use learned token and position embeddings and post-norm
//! residual sublayers (`x = LayerNorm(x + Dropout(Sublayer(x)))`). Encoder
//! layers hold self-attention (bidirectional or causal per config) and a GeLU
//! feed-forward block; decoder layers hold causal self-attention,
//! cross-attention over the encoder output, and a feed-forward block. The
//! output projection is not tied to the decoder embedding.

mod config;

pub use config::{
    variant_config, Activation, Family, Masking, ModelConfig, Scale, Variant, VariantSpec, BERT_VOCAB_SIZE,
    GPT2_VOCAB_SIZE, MAX_TOKENS,
};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::Batch;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Mask, Tensor, TensorError, Var};
use crate::tokenizer::TokenId;

pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// A named parameter tensor. `decay` marks whether AdamW weight decay applies.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub decay: bool,
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    self_attn: Attention,
    norm1: Norm,
    ff: FeedForward,
    norm2: Norm,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    self_attn: Attention,
    norm1: Norm,
    cross_attn: Attention,
    norm2: Norm,
    ff: FeedForward,
    norm3: Norm,
}

#[derive(Debug, Clone)]
struct Layout {
    enc_tok: usize,
    enc_pos: usize,
    dec_tok: usize,
    dec_pos: usize,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    out: Linear,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
    decay: bool,
}

#[derive(Default)]
struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init, decay: bool) -> usize {
        self.specs.push(ParamSpec {
            name,
            shape,
            init,
            decay,
        });
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.push(format!("{name}.weight"), vec![fan_in, fan_out], Init::Normal, true),
            b: self.push(format!("{name}.bias"), vec![fan_out], Init::Zeros, false),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gain: self.push(format!("{name}.gain"), vec![d], Init::Ones, false),
            bias: self.push(format!("{name}.bias"), vec![d], Init::Zeros, false),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.query"), d, d),
            k: self.linear(&format!("{name}.key"), d, d),
            v: self.linear(&format!("{name}.value"), d, d),
            o: self.linear(&format!("{name}.output"), d, d),
        }
    }

    fn feed_forward(&mut self, name: &str, d: usize, f: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), d, f),
            down: self.linear(&format!("{name}.down"), f, d),
        }
    }
}

fn layout(config: &ModelConfig) -> (Layout, Vec<ParamSpec>) {
    let (d, f, v, l) = (config.d_model, config.d_ff, config.vocab_size, config.max_len);
    let mut b = Builder::default();
    let enc_tok = b.push("encoder.token_embedding".into(), vec![v, d], Init::Normal, true);
    let enc_pos = b.push("encoder.position_embedding".into(), vec![l, d], Init::Normal, true);
    let encoder = (0..config.n_layers)
        .map(|i| {
            let p = format!("encoder.layers.{i}");
            EncoderLayer {
                self_attn: b.attention(&format!("{p}.self_attn"), d),
                norm1: b.norm(&format!("{p}.norm1"), d),
                ff: b.feed_forward(&format!("{p}.ff"), d, f),
                norm2: b.norm(&format!("{p}.norm2"), d),
            }
        })
        .collect();
    let dec_tok = b.push("decoder.token_embedding".into(), vec![v, d], Init::Normal, true);
    let dec_pos = b.push("decoder.position_embedding".into(), vec![l, d], Init::Normal, true);
    let decoder = (0..config.n_layers)
        .map(|i| {
            let p = format!("decoder.layers.{i}");
            DecoderLayer {
                self_attn: b.attention(&format!("{p}.self_attn"), d),
                norm1: b.norm(&format!("{p}.norm1"), d),
                cross_attn: b.attention(&format!("{p}.cross_attn"), d),
                norm2: b.norm(&format!("{p}.norm2"), d),
                ff: b.feed_forward(&format!("{p}.ff"), d, f),
                norm3: b.norm(&format!("{p}.norm3"), d),
            }
        })
        .collect();
    let out = b.linear("output", d, v);
    let lay = Layout {
        enc_tok,
        enc_pos,
        dec_tok,
        dec_pos,
        encoder,
        decoder,
        out,
    };
    (lay, b.specs)
}

/// Scaled dot-product attention: `softmax(q k^T / sqrt(d_h), mask) v` over
/// `q, k, v : [B, h, L, d_h]` and a mask broadcastable to `[B, h, Lq, Lk]`.
pub fn attention(g: &mut Graph<'_>, q: Var, k: Var, v: Var, mask: &Mask) -> Result<Var, TensorError> {
    let dh = *g.shape(q).last().unwrap_or(&1);
    let kt = g.transpose_last2(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let weights = g.masked_softmax(scores, mask)?;
    g.matmul(weights, v)
}

/// Self-attention mask `[B, 1, L, L]` from per-row key validity.
fn self_mask(valid: &[Vec<bool>], causal: bool) -> Mask {
    let (b, l) = (valid.len(), valid.first().map_or(0, Vec::len));
    let mut data = Vec::with_capacity(b * l * l);
    for row in valid {
        for q in 0..l {
            data.extend((0..l).map(|k| row[k] && (!causal || k <= q)));
        }
    }
    Mask::new(vec![b, 1, l, l], data).expect("mask dims agree")
}

/// Cross-attention mask `[B, 1, Lq, Lk]`: every query sees the non-pad source keys.
fn cross_mask(src_valid: &[Vec<bool>], lq: usize) -> Mask {
    let (b, lk) = (src_valid.len(), src_valid.first().map_or(0, Vec::len));
    let mut data = Vec::with_capacity(b * lq * lk);
    for row in src_valid {
        for _ in 0..lq {
            data.extend_from_slice(row);
        }
    }
    Mask::new(vec![b, 1, lq, lk], data).expect("mask dims agree")
}

/// Encoder output for one source sentence, reused across decoding steps.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    memory: Tensor,
    valid: Vec<bool>,
}

impl EncodedSource {
    pub fn memory(&self) -> &Tensor {
        &self.memory
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
    layout: Layout,
}

/// Builds a model with weights drawn from N(0, 0.02^2) by a ChaCha8 stream
/// seeded with `seed`; biases start at 0 and layer-norm gains at 1.
pub fn init_model(config: ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let (layout, specs) = layout(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let params = specs
        .into_iter()
        .map(|s| {
            let numel: usize = s.shape.iter().product();
            let data = match s.init {
                Init::Normal => (0..numel).map(|_| normal.sample(&mut rng)).collect(),
                Init::Zeros => vec![0.0; numel],
                Init::Ones => vec![1.0; numel],
            };
            Param {
                name: s.name,
                tensor: Tensor::new(s.shape, data).expect("shape matches data"),
                decay: s.decay,
            }
        })
        .collect();
    Ok(Model { config, params, layout })
}

type Dropout<'r> = Option<&'r mut dyn RngCore>;

fn reborrow<'b>(rng: &'b mut Dropout<'_>) -> Dropout<'b> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

impl Model {
    /// Reassembles a model from named tensors, e.g. when loading a checkpoint.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Model> {
        config.validate()?;
        let (layout, specs) = layout(&config);
        if named.len() != specs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        let params = specs
            .into_iter()
            .zip(named)
            .map(|(s, (name, tensor))| {
                if s.name != name || s.shape != tensor.shape() {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} {:?} does not match expected {} {:?}",
                        tensor.shape(),
                        s.name,
                        s.shape
                    )));
                }
                Ok(Param {
                    name,
                    tensor,
                    decay: s.decay,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Model { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Registers every parameter on `g`, in parameter order.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(&p.tensor)).collect()
    }

    /// Teacher-forced logits `[B, Lt, V]`. Dropout is applied only when an
    /// RNG is supplied (training mode).
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, batch: &Batch, dropout: Dropout<'_>) -> Result<Var> {
        let p = self.bind(g);
        self.forward_bound(g, &p, batch, dropout)
    }

    /// As [`Model::forward`] with parameters already bound by [`Model::bind`].
    pub fn forward_bound(&self, g: &mut Graph<'_>, p: &[Var], batch: &Batch, mut dropout: Dropout<'_>) -> Result<Var> {
        let memory = self.encoder_stack(g, p, &batch.source_ids, &batch.source_pad_mask, reborrow(&mut dropout))?;
        let hidden = self.decoder_stack(
            g,
            p,
            memory,
            &batch.source_pad_mask,
            &batch.target_in_ids,
            &batch.target_pad_mask,
            dropout,
        )?;
        Ok(self.project(g, p, hidden)?)
    }

    /// Teacher-forced mean cross-entropy over non-pad target positions.
    pub fn loss_bound(
        &self,
        g: &mut Graph<'_>,
        p: &[Var],
        batch: &Batch,
        dropout: Dropout<'_>,
        pad_id: TokenId,
    ) -> Result<Var> {
        let logits = self.forward_bound(g, p, batch, dropout)?;
        let targets: Vec<usize> = batch.target_out_ids.iter().flatten().map(|&t| t as usize).collect();
        Ok(g.cross_entropy(logits, &targets, pad_id as usize)?)
    }

    /// Encoder output `[B, Ls, d]`.
    pub fn encoder_output<'a>(&'a self, g: &mut Graph<'a>, ids: &[Vec<TokenId>], valid: &[Vec<bool>]) -> Result<Var> {
        let p = self.bind(g);
        self.encoder_stack(g, &p, ids, valid, None)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::Config(format!(
                "sequence of {len} tokens exceeds max_len {}",
                self.config.max_len
            )));
        }
        Ok(())
    }

    fn embed(&self, g: &mut Graph<'_>, p: &[Var], tok: usize, pos: usize, ids: &[Vec<TokenId>]) -> Result<Var> {
        let (b, l) = (ids.len(), ids.first().map_or(0, Vec::len));
        self.check_len(l)?;
        if ids.iter().any(|r| r.len() != l) {
            return Err(Error::Config("ragged id matrix".into()));
        }
        let flat: Vec<usize> = ids.iter().flatten().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..l).collect();
        let t = g.embedding(p[tok], &flat, &[b, l])?;
        let q = g.embedding(p[pos], &positions, &[b, l])?;
        Ok(g.add(t, q)?)
    }

    fn dropout(&self, g: &mut Graph<'_>, x: Var, rng: Option<&mut dyn RngCore>) -> Result<Var, TensorError> {
        match rng {
            Some(rng) if self.config.dropout_rate > 0.0 => g.dropout(x, self.config.dropout_rate, rng),
            _ => Ok(x),
        }
    }

    fn linear(&self, g: &mut Graph<'_>, p: &[Var], l: Linear, x: Var) -> Result<Var, TensorError> {
        let y = g.matmul(x, p[l.w])?;
        g.add_bias(y, p[l.b])
    }

    fn norm(&self, g: &mut Graph<'_>, p: &[Var], n: Norm, x: Var) -> Result<Var, TensorError> {
        g.layer_norm(x, p[n.gain], p[n.bias], LAYER_NORM_EPS)
    }

    fn split_heads(&self, g: &mut Graph<'_>, x: Var) -> Result<Var, TensorError> {
        let s = g.shape(x).to_vec();
        let (h, dh) = (self.config.n_heads, self.config.head_dim());
        let x = g.reshape(x, &[s[0], s[1], h, dh])?;
        g.permute(x, &[0, 2, 1, 3])
    }

    fn multi_head(
        &self,
        g: &mut Graph<'_>,
        p: &[Var],
        a: Attention,
        xq: Var,
        xkv: Var,
        mask: &Mask,
    ) -> Result<Var, TensorError> {
        let q = self.linear(g, p, a.q, xq)?;
        let k = self.linear(g, p, a.k, xkv)?;
        let v = self.linear(g, p, a.v, xkv)?;
        let (q, k, v) = (
            self.split_heads(g, q)?,
            self.split_heads(g, k)?,
            self.split_heads(g, v)?,
        );
        let ctx = attention(g, q, k, v, mask)?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let s = g.shape(ctx).to_vec();
        let ctx = g.reshape(ctx, &[s[0], s[1], self.config.d_model])?;
        self.linear(g, p, a.o, ctx)
    }

    fn feed_forward(&self, g: &mut Graph<'_>, p: &[Var], f: FeedForward, x: Var) -> Result<Var, TensorError> {
        let h = self.linear(g, p, f.up, x)?;
        let h = match self.config.activation {
            Activation::Gelu => g.gelu(h)?,
        };
        self.linear(g, p, f.down, h)
    }

    /// `norm(x + dropout(y))`
    fn residual(
        &self,
        g: &mut Graph<'_>,
        p: &[Var],
        n: Norm,
        x: Var,
        y: Var,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var, TensorError> {
        let y = self.dropout(g, y, rng)?;
        let s = g.add(x, y)?;
        self.norm(g, p, n, s)
    }

    fn encoder_stack(
        &self,
        g: &mut Graph<'_>,
        p: &[Var],
        ids: &[Vec<TokenId>],
        valid: &[Vec<bool>],
        mut rng: Dropout<'_>,
    ) -> Result<Var> {
        let lay = &self.layout;
        let x = self.embed(g, p, lay.enc_tok, lay.enc_pos, ids)?;
        let mut x = self.dropout(g, x, reborrow(&mut rng))?;
        let mask = self_mask(valid, self.config.encoder_masking == Masking::Causal);
        for layer in &lay.encoder {
            let a = self.multi_head(g, p, layer.self_attn, x, x, &mask)?;
            x = self.residual(g, p, layer.norm1, x, a, reborrow(&mut rng))?;
            let f = self.feed_forward(g, p, layer.ff, x)?;
            x = self.residual(g, p, layer.norm2, x, f, reborrow(&mut rng))?;
        }
        Ok(x)
    }

    #[allow(clippy::too_many_arguments)]
    fn decoder_stack(
        &self,
        g: &mut Graph<'_>,
        p: &[Var],
        memory: Var,
        src_valid: &[Vec<bool>],
        ids: &[Vec<TokenId>],
        valid: &[Vec<bool>],
        mut rng: Dropout<'_>,
    ) -> Result<Var> {
        let lay = &self.layout;
        let y = self.embed(g, p, lay.dec_tok, lay.dec_pos, ids)?;
        let mut y = self.dropout(g, y, reborrow(&mut rng))?;
        let lq = ids.first().map_or(0, Vec::len);
        let self_m = self_mask(valid, true);
        let cross_m = cross_mask(src_valid, lq);
        for layer in &lay.decoder {
            let a = self.multi_head(g, p, layer.self_attn, y, y, &self_m)?;
            y = self.residual(g, p, layer.norm1, y, a, reborrow(&mut rng))?;
            let c = self.multi_head(g, p, layer.cross_attn, y, memory, &cross_m)?;
            y = self.residual(g, p, layer.norm2, y, c, reborrow(&mut rng))?;
            let f = self.feed_forward(g, p, layer.ff, y)?;
            y = self.residual(g, p, layer.norm3, y, f, reborrow(&mut rng))?;
        }
        Ok(y)
    }

    fn project(&self, g: &mut Graph<'_>, p: &[Var], hidden: Var) -> Result<Var, TensorError> {
        self.linear(g, p, self.layout.out, hidden)
    }

    /// Runs the encoder once over a single framed source sequence.
    pub fn encode_source(&self, ids: &[TokenId]) -> Result<EncodedSource> {
        let valid = vec![true; ids.len()];
        let mut g = Graph::no_grad();
        let memory = self.encoder_output(&mut g, &[ids.to_vec()], std::slice::from_ref(&valid))?;
        Ok(EncodedSource {
            memory: g.to_tensor(memory),
            valid,
        })
    }

    /// Logits for the token following `prefix` (which starts with BOS).
    pub fn next_token_logits(&self, source: &EncodedSource, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let mut g = Graph::no_grad();
        let p = self.bind(&mut g);
        let memory = g.param(&source.memory);
        let src_valid = std::slice::from_ref(&source.valid);
        let valid = vec![vec![true; prefix.len()]];
        let hidden = self.decoder_stack(&mut g, &p, memory, src_valid, &[prefix.to_vec()], &valid, None)?;
        let last = g.narrow(hidden, 1, prefix.len() - 1, 1)?;
        let logits = self.project(&mut g, &p, last)?;
        Ok(g.value(logits).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Batch, TokenPair};

    fn toy(variant: Variant, vocab: usize) -> ModelConfig {
        variant_config(variant, Scale::Toy).with_vocab_size(vocab)
    }

    fn batch(pairs: &[(Vec<TokenId>, Vec<TokenId>)]) -> Batch {
        let pairs: Vec<TokenPair> = pairs
            .iter()
            .map(|(s, t)| TokenPair {
                source: s.clone(),
                target: t.clone(),
            })
            .collect();
        let refs: Vec<&TokenPair> = pairs.iter().collect();
        Batch::from_pairs(&refs, 0)
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(toy(Variant::Bert, 20), 7).unwrap();
        let b = init_model(toy(Variant::Bert, 20), 7).unwrap();
        let c = init_model(toy(Variant::Bert, 20), 8).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn norm_gains_are_one() {
        let m = init_model(toy(Variant::Gpt2, 20), 1).unwrap();
        let gains: Vec<&Param> = m.params().iter().filter(|p| p.name.ends_with(".gain")).collect();
        assert_eq!(gains.len(), 2 * 2 + 3 * 2);
        assert!(gains.iter().all(|p| p.tensor.data().iter().all(|&v| v == 1.0)));
        assert!(gains.iter().all(|p| !p.decay));
    }

    #[test]
    fn init_statistics() {
        let m = init_model(toy(Variant::Bert, 50), 3).unwrap();
        let w = &m.param("decoder.layers.0.ff.up.weight").unwrap().tensor;
        let n = w.numel() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.002, "{mean}");
        assert!((std - 0.02).abs() < 0.002, "{std}");
    }

    #[test]
    fn logits_shape() {
        let m = init_model(toy(Variant::BertGpt2, 20), 1).unwrap();
        let b = batch(&[
            (vec![1, 5, 6, 2], vec![1, 7, 2]),
            (vec![1, 8, 2], vec![1, 9, 10, 11, 2]),
        ]);
        let mut g = Graph::no_grad();
        let logits = m.forward(&mut g, &b, None).unwrap();
        assert_eq!(g.shape(logits), &[2, 4, 20]);
    }

    #[test]
    fn over_long_sequence_rejected() {
        let mut cfg = toy(Variant::Bert, 20);
        cfg.max_len = 4;
        let m = init_model(cfg, 1).unwrap();
        let b = batch(&[(vec![1, 5, 6, 7, 8, 2], vec![1, 7, 2])]);
        let mut g = Graph::no_grad();
        assert!(matches!(m.forward(&mut g, &b, None), Err(Error::Config(_))));
    }

    #[test]
    fn attention_singleton_and_symmetry() {
        let mut g = Graph::no_grad();
        let q = g.constant(Tensor::new(vec![1, 1, 1, 2], vec![0.3, -0.7]).unwrap());
        let k = g.constant(Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        let v = g.constant(Tensor::new(vec![1, 1, 1, 2], vec![5.0, -4.0]).unwrap());
        let out = attention(&mut g, q, k, v, &Mask::all(vec![1, 1, 1, 1])).unwrap();
        assert_eq!(g.value(out), &[5.0, -4.0]);

        let q = g.constant(Tensor::new(vec![1, 1, 1, 2], vec![0.0, 0.0]).unwrap());
        let k = g.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap());
        let v = g.constant(Tensor::new(vec![1, 1, 2, 2], vec![2.0, 4.0, 6.0, 0.0]).unwrap());
        let out = attention(&mut g, q, k, v, &Mask::all(vec![1, 1, 1, 2])).unwrap();
        assert_eq!(g.value(out), &[4.0, 2.0]);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut cfg = toy(Variant::Gpt2, 20);
        cfg.dropout_rate = 0.1;
        let m = init_model(cfg, 5).unwrap();
        let b = batch(&[(vec![1, 5, 6, 2], vec![1, 7, 8, 2])]);
        let run = || {
            let mut g = Graph::no_grad();
            let l = m.forward(&mut g, &b, None).unwrap();
            g.value(l).to_vec()
        };
        assert_eq!(run(), run());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::no_grad();
        let l = m.forward(&mut g, &b, Some(&mut rng)).unwrap();
        assert_ne!(g.value(l), run().as_slice());
    }

    #[test]
    fn incremental_logits_match_full_forward() {
        let m = init_model(toy(Variant::Bert, 20), 2).unwrap();
        let src = vec![1, 5, 6, 7, 2];
        let tgt_in = vec![1, 8, 9];
        let b = batch(&[(src.clone(), vec![1, 8, 9, 2])]);
        let mut g = Graph::no_grad();
        let logits = m.forward(&mut g, &b, None).unwrap();
        let full = g.value(logits)[2 * 20..3 * 20].to_vec();
        let enc = m.encode_source(&src).unwrap();
        let step = m.next_token_logits(&enc, &tgt_in).unwrap();
        for (a, b) in full.iter().zip(&step) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn from_named_checks_layout() {
        let m = init_model(toy(Variant::Bert, 20), 2).unwrap();
        let named: Vec<(String, Tensor)> = m.params().iter().map(|p| (p.name.clone(), p.tensor.clone())).collect();
        let back = Model::from_named(m.config().clone(), named.clone()).unwrap();
        assert_eq!(back.params(), m.params());
        let mut bad = named;
        bad.swap(0, 1);
        assert!(Model::from_named(m.config().clone(), bad).is_err());
    }
}
