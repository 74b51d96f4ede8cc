use tch::{nn, nn::Module, Tensor};

use crate::error::{param, Result};

/// Hidden width of the token MLP relative to `d`.
pub const MLP_RATIO: i64 = 2;

/// Multi-head scaled dot-product self-attention.
#[derive(Debug)]
pub struct Attention {
    qkv: nn::Linear,
    out: nn::Linear,
    heads: i64,
    d: i64,
}

impl Attention {
    pub fn new(p: nn::Path, d: i64, heads: i64) -> Result<Self> {
        if heads < 1 || d % heads != 0 {
            return Err(param(format!("width {d} is not divisible into {heads} heads")));
        }
        Ok(Attention {
            qkv: nn::linear(&p / "qkv", d, 3 * d, Default::default()),
            out: nn::linear(&p / "out", d, d, Default::default()),
            heads,
            d,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let s = x.size();
        let (b, t) = (s[0], s[1]);
        let dh = self.d / self.heads;
        let qkv = self.qkv.forward(x).view([b, t, 3, self.heads, dh]).permute([2, 0, 3, 1, 4]);
        let (q, k, v) = (qkv.get(0), qkv.get(1), qkv.get(2));
        let att = (q.matmul(&k.transpose(-2, -1)) / (dh as f64).sqrt()).softmax(-1, None);
        let y = att.matmul(&v).transpose(1, 2).reshape([b, t, self.d]);
        self.out.forward(&y)
    }
}

/// Pre-norm layer: `y = Att(LN(z)) + z`, `z' = MLP(LN(y)) + y`.
#[derive(Debug)]
pub struct TransformerLayer {
    ln1: nn::LayerNorm,
    attn: Attention,
    ln2: nn::LayerNorm,
    fc1: nn::Linear,
    fc2: nn::Linear,
}

impl TransformerLayer {
    pub fn new(p: nn::Path, d: i64, heads: i64) -> Result<Self> {
        Ok(TransformerLayer {
            ln1: nn::layer_norm(&p / "ln1", vec![d], Default::default()),
            attn: Attention::new(&p / "attn", d, heads)?,
            ln2: nn::layer_norm(&p / "ln2", vec![d], Default::default()),
            fc1: nn::linear(&p / "fc1", d, MLP_RATIO * d, Default::default()),
            fc2: nn::linear(&p / "fc2", MLP_RATIO * d, d, Default::default()),
        })
    }

    pub fn forward(&self, z: &Tensor) -> Tensor {
        let y = self.attn.forward(&self.ln1.forward(z)) + z;
        let h = self.fc1.forward(&self.ln2.forward(&y)).gelu("none");
        self.fc2.forward(&h) + y
    }
}

#[derive(Debug)]
pub struct Transformer {
    pub layers: Vec<TransformerLayer>,
}

impl Transformer {
    pub fn new(p: nn::Path, d: i64, heads: i64, n_layers: usize) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|i| TransformerLayer::new(&p / format!("layer{i}"), d, heads))
            .collect::<Result<_>>()?;
        Ok(Transformer { layers })
    }

    pub fn forward(&self, z: &Tensor) -> Tensor {
        self.layers.iter().fold(z.shallow_clone(), |h, l| l.forward(&h))
    }
}

/// Concatenates `[cls, seq_0, seq_1, ...]`, runs the stack and returns the
/// class-token output, `(B, d)`. No positional term is added here, so the
/// result is invariant to the order of the input sequences.
#[derive(Debug)]
pub struct MhaFuse {
    pub cls: Tensor,
    pub stack: Transformer,
    pub d: i64,
}

impl MhaFuse {
    pub fn new(p: nn::Path, d: i64, heads: i64, n_layers: usize) -> Result<Self> {
        Ok(MhaFuse {
            cls: p.var("cls", &[1, 1, d], nn::Init::Const(0.0)),
            stack: Transformer::new(&p / "stack", d, heads, n_layers)?,
            d,
        })
    }

    pub fn forward(&self, seqs: &[&Tensor]) -> Result<Tensor> {
        let first = seqs.first().ok_or_else(|| param("mha_fuse needs at least one sequence"))?;
        let b = first.size()[0];
        let mut parts = vec![self.cls.expand([b, 1, self.d], false)];
        for s in seqs {
            let sz = s.size();
            if sz.len() != 3 || sz[0] != b || sz[2] != self.d {
                return Err(param(format!("mha_fuse expects (B={b}, T, {}), got {sz:?}", self.d)));
            }
            parts.push(s.shallow_clone());
        }
        let out = self.stack.forward(&Tensor::cat(&parts, 1));
        Ok(out.select(1, 0))
    }
}
