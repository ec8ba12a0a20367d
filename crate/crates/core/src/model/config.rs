use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const BERT_VOCAB_SIZE: usize = 30522;
pub const GPT2_VOCAB_SIZE: usize = 50257;
pub const PAPER_D_MODEL: usize = 768;
pub const PAPER_HEADS: usize = 12;
pub const PAPER_LAYERS: usize = 12;
pub const PAPER_D_FF: usize = 3072;
pub const MAX_TOKENS: usize = 80;

/// Pretrained model family that one side of the encoder-decoder stands in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Bert,
    Gpt2,
}

impl Family {
    pub fn paper_vocab_size(self) -> usize {
        match self {
            Family::Bert => BERT_VOCAB_SIZE,
            Family::Gpt2 => GPT2_VOCAB_SIZE,
        }
    }

    /// Self-attention masking this family uses when it serves as the encoder.
    pub fn encoder_masking(self) -> Masking {
        match self {
            Family::Bert => Masking::Bidirectional,
            Family::Gpt2 => Masking::Causal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Masking {
    Bidirectional,
    Causal,
}

impl Masking {
    pub fn as_str(self) -> &'static str {
        match self {
            Masking::Bidirectional => "bidirectional",
            Masking::Causal => "causal",
        }
    }
}

impl FromStr for Masking {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bidirectional" => Ok(Masking::Bidirectional),
            "causal" => Ok(Masking::Causal),
            _ => Err(Error::Config(format!("unknown masking {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
}

/// Encoder+decoder pairing. `BertGpt2` means a BERT-style encoder feeding a
/// GPT-2-style decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Bert,
    Gpt2,
    BertGpt2,
    Gpt2Bert,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Bert, Variant::Gpt2, Variant::BertGpt2, Variant::Gpt2Bert];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Bert => "bert",
            Variant::Gpt2 => "gpt2",
            Variant::BertGpt2 => "bert+gpt2",
            Variant::Gpt2Bert => "gpt2+bert",
        }
    }

    /// Label used in comparison tables, e.g. `BERT+GPT-2`.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Bert => "BERT",
            Variant::Gpt2 => "GPT-2",
            Variant::BertGpt2 => "BERT+GPT-2",
            Variant::Gpt2Bert => "GPT-2+BERT",
        }
    }

    pub fn encoder(self) -> Family {
        match self {
            Variant::Bert | Variant::BertGpt2 => Family::Bert,
            Variant::Gpt2 | Variant::Gpt2Bert => Family::Gpt2,
        }
    }

    pub fn decoder(self) -> Family {
        match self {
            Variant::Bert | Variant::Gpt2Bert => Family::Bert,
            Variant::Gpt2 | Variant::BertGpt2 => Family::Gpt2,
        }
    }

    pub fn spec(self) -> VariantSpec {
        VariantSpec {
            variant: self,
            encoder_masking: self.encoder().encoder_masking(),
            paper_vocab_sizes: (self.encoder().paper_vocab_size(), self.decoder().paper_vocab_size()),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown variant {s:?} (expected bert, gpt2, bert+gpt2 or gpt2+bert)"
            ))
        })
    }
}

/// Wiring facts of a variant. The decoder always uses causal self-attention
/// plus cross-attention, whichever family it stands in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantSpec {
    pub variant: Variant,
    pub encoder_masking: Masking,
    /// (encoder, decoder) vocabulary sizes of the full-scale pretrained models.
    pub paper_vocab_sizes: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Paper,
    Toy,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Paper => "paper",
            Scale::Toy => "toy",
        }
    }
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Scale::Paper),
            "toy" => Ok(Scale::Toy),
            _ => Err(Error::Config(format!("unknown scale {s:?} (expected paper or toy)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Layers per stack (encoder and decoder each).
    pub n_layers: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub encoder_masking: Masking,
    pub activation: Activation,
    pub dropout_rate: f64,
}

/// Architecture for `variant` at `scale`.
///
/// Toy configs leave `vocab_size` at 0; set it from the built vocabulary with
/// [`ModelConfig::with_vocab_size`]. Mixed variants share one vocabulary, so
/// the paper preset uses the decoder family's size (it sizes the output layer).
pub fn variant_config(variant: Variant, scale: Scale) -> ModelConfig {
    let encoder_masking = variant.spec().encoder_masking;
    match scale {
        Scale::Paper => ModelConfig {
            d_model: PAPER_D_MODEL,
            n_heads: PAPER_HEADS,
            n_layers: PAPER_LAYERS,
            d_ff: PAPER_D_FF,
            vocab_size: variant.decoder().paper_vocab_size(),
            max_len: MAX_TOKENS,
            encoder_masking,
            activation: Activation::Gelu,
            dropout_rate: 0.1,
        },
        Scale::Toy => ModelConfig {
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            d_ff: 128,
            vocab_size: 0,
            max_len: MAX_TOKENS,
            encoder_masking,
            activation: Activation::Gelu,
            dropout_rate: 0.0,
        },
    }
}

impl ModelConfig {
    pub fn with_vocab_size(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 || self.d_ff == 0 {
            return fail("n_layers and d_ff must be positive".into());
        }
        if self.vocab_size < 5 {
            return fail(format!("vocab_size {} is below the minimum of 5", self.vocab_size));
        }
        if self.max_len < 3 {
            return fail(format!("max_len {} is below 3", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let (d, f, v) = (self.d_model, self.d_ff, self.vocab_size);
        let attention = 4 * (d * d + d);
        let norm = 2 * d;
        let feed_forward = d * f + f + f * d + d;
        let encoder_layer = attention + norm + feed_forward + norm;
        let decoder_layer = 2 * attention + feed_forward + 3 * norm;
        let embeddings = 2 * (v * d + self.max_len * d);
        embeddings + self.n_layers * (encoder_layer + decoder_layer) + d * v + v
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("d_model".into(), self.d_model.to_string()),
            ("n_heads".into(), self.n_heads.to_string()),
            ("n_layers".into(), self.n_layers.to_string()),
            ("d_ff".into(), self.d_ff.to_string()),
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("max_len".into(), self.max_len.to_string()),
            ("encoder_masking".into(), self.encoder_masking.as_str().into()),
            ("activation".into(), "gelu".into()),
            ("dropout_rate".into(), self.dropout_rate.to_string()),
        ]
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = kv.get(key).ok_or_else(|| Error::Config(format!("missing key {key}")))?;
            raw.parse()
                .map_err(|_| Error::Config(format!("bad value {raw:?} for {key}")))
        }
        if kv.get("activation").map(String::as_str) != Some("gelu") {
            return Err(Error::Config("activation must be gelu".into()));
        }
        let cfg = ModelConfig {
            d_model: get(kv, "d_model")?,
            n_heads: get(kv, "n_heads")?,
            n_layers: get(kv, "n_layers")?,
            d_ff: get(kv, "d_ff")?,
            vocab_size: get(kv, "vocab_size")?,
            max_len: get(kv, "max_len")?,
            encoder_masking: get::<String>(kv, "encoder_masking")?.parse()?,
            activation: Activation::Gelu,
            dropout_rate: get(kv, "dropout_rate")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_presets() {
        let c = variant_config(Variant::Bert, Scale::Paper);
        assert_eq!((c.d_model, c.n_heads, c.n_layers, c.max_len), (768, 12, 12, 80));
        assert_eq!(c.encoder_masking, Masking::Bidirectional);
        assert_eq!(c.vocab_size, 30522);

        let c = variant_config(Variant::Gpt2, Scale::Paper);
        assert_eq!(c.encoder_masking, Masking::Causal);
        assert_eq!(c.vocab_size, 50257);
        assert_eq!(Variant::Gpt2.spec().paper_vocab_sizes, (50257, 50257));
        assert_eq!(Variant::BertGpt2.spec().paper_vocab_sizes, (30522, 50257));
    }

    #[test]
    fn toy_mixed_variant() {
        let c = variant_config(Variant::BertGpt2, Scale::Toy);
        assert_eq!(c.encoder_masking, Masking::Bidirectional);
        assert_eq!(c.d_model, 64);
        assert!(c.validate().is_err());
        assert!(c.with_vocab_size(40).validate().is_ok());
        assert_eq!(
            variant_config(Variant::Gpt2Bert, Scale::Toy).encoder_masking,
            Masking::Causal
        );
    }

    #[test]
    fn names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("t5".parse::<Variant>().is_err());
        assert!("huge".parse::<Scale>().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let c = variant_config(Variant::Gpt2, Scale::Toy).with_vocab_size(77);
        let kv: BTreeMap<_, _> = c.to_kv().into_iter().collect();
        assert_eq!(ModelConfig::from_kv(&kv).unwrap(), c);
    }

    #[test]
    fn validation() {
        let mut c = variant_config(Variant::Bert, Scale::Toy).with_vocab_size(10);
        c.n_heads = 3;
        assert!(c.validate().is_err());
        c.n_heads = 2;
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
    }
}
