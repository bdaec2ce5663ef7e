use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Activation, Ablation, ModelConfig};
use crate::autodiff::{BoundParams, Graph, ParamStore, Tensor, Var};
use crate::error::Result;

const LN_EPS: f64 = 1e-5;

/// Sinusoidal positional encoding, `[len, d]`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[len, d], |k| {
        let (pos, i) = (k / d, k % d);
        let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 / rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

// ---- parameter registration -------------------------------------------------

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn xavier(&mut self, rows: usize, cols: usize) -> Tensor {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        Tensor::from_fn(&[rows, cols], |_| self.rng.random_range(-a..a))
    }
}

fn add_linear(s: &mut ParamStore, init: &mut Init, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<()> {
    s.insert(format!("{name}.w"), init.xavier(fan_in, fan_out))?;
    if bias {
        s.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
    }
    Ok(())
}

fn add_norm(s: &mut ParamStore, name: &str, d: usize) -> Result<()> {
    s.insert(format!("{name}.g"), Tensor::full(&[d], 1.0))?;
    s.insert(format!("{name}.b"), Tensor::zeros(&[d]))
}

fn add_attention(s: &mut ParamStore, init: &mut Init, name: &str, d: usize) -> Result<()> {
    for w in ["wq", "wk", "wv"] {
        s.insert(format!("{name}.{w}"), init.xavier(d, d))?;
    }
    add_linear(s, init, &format!("{name}.wo"), d, d, true)
}

fn add_ffn(s: &mut ParamStore, init: &mut Init, name: &str, d: usize, hidden: usize) -> Result<()> {
    add_linear(s, init, &format!("{name}.fc1"), d, hidden, true)?;
    add_linear(s, init, &format!("{name}.fc2"), hidden, d, true)
}

fn add_encoder_block(s: &mut ParamStore, init: &mut Init, name: &str, cfg: &ModelConfig) -> Result<()> {
    let d = cfg.d_model;
    add_attention(s, init, &format!("{name}.attn"), d)?;
    add_norm(s, &format!("{name}.ln1"), d)?;
    add_ffn(s, init, &format!("{name}.ffn"), d, cfg.ffn_width())?;
    add_norm(s, &format!("{name}.ln2"), d)
}

/// Xavier-uniform weights, zero biases, unit layer-norm gains.
pub fn init_params(cfg: &ModelConfig, n_nodes: usize, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let d = cfg.d_model;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut s = ParamStore::new();
    add_linear(&mut s, &mut init, "patch", cfg.effective_patch(), d, true)?;
    if cfg.ablation.has_encoders() {
        for l in 0..cfg.temporal_depth {
            add_encoder_block(&mut s, &mut init, &format!("temporal.{l}"), cfg)?;
        }
    }
    s.insert("node_emb", init.xavier(n_nodes, d))?;
    if cfg.ablation.has_encoders() {
        for l in 0..cfg.spatial_depth {
            add_encoder_block(&mut s, &mut init, &format!("spatial.{l}"), cfg)?;
        }
    }
    if cfg.ablation.has_decoder() {
        s.insert("decoder.query", init.xavier(cfg.horizon, d))?;
        for l in 0..cfg.decoder_depth() {
            let name = format!("decoder.{l}");
            add_attention(&mut s, &mut init, &format!("{name}.self"), d)?;
            add_norm(&mut s, &format!("{name}.ln1"), d)?;
            if cfg.ablation.has_cross_attention() {
                add_attention(&mut s, &mut init, &format!("{name}.cross"), d)?;
                add_norm(&mut s, &format!("{name}.ln2"), d)?;
            }
            add_ffn(&mut s, &mut init, &format!("{name}.ffn"), d, cfg.ffn_width())?;
            add_norm(&mut s, &format!("{name}.ln3"), d)?;
        }
        add_linear(&mut s, &mut init, "head", d, 1, true)?;
    } else {
        add_linear(&mut s, &mut init, "head", d, cfg.horizon, true)?;
    }
    Ok(s)
}

// ---- building blocks --------------------------------------------------------

/// Parameter handles and config shared by the forward pass.
pub struct Net<'a> {
    pub cfg: &'a ModelConfig,
    pub p: &'a BoundParams,
}

impl Net<'_> {
    fn linear(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let y = g.matmul(x, self.p.get(&format!("{name}.w")))?;
        match self.p.try_get(&format!("{name}.b")) {
            Some(b) => g.add(y, b),
            None => Ok(y),
        }
    }

    fn norm(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let y = g.layer_norm(x, LN_EPS)?;
        let y = g.mul(y, self.p.get(&format!("{name}.g")))?;
        g.add(y, self.p.get(&format!("{name}.b")))
    }

    /// Multi-head scaled dot-product attention of `q_in` (`[.., m, d]`) over
    /// `kv_in` (`[.., n, d]`).
    pub fn attention(&self, g: &mut Graph, q_in: Var, kv_in: Var, name: &str) -> Result<Var> {
        let q = g.matmul(q_in, self.p.get(&format!("{name}.wq")))?;
        let k = g.matmul(kv_in, self.p.get(&format!("{name}.wk")))?;
        let v = g.matmul(kv_in, self.p.get(&format!("{name}.wv")))?;
        let dk = self.cfg.head_dim();
        let last = g.shape(q).len() - 1;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let (qh, kh, vh) = if self.cfg.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice(q, last, h * dk, dk)?,
                    g.slice(k, last, h * dk, dk)?,
                    g.slice(v, last, h * dk, dk)?,
                )
            };
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax(scores)?;
            outs.push(g.matmul(weights, vh)?);
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat(&outs, last)? };
        self.linear(g, joined, &format!("{name}.wo"))
    }

    fn ffn(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let h = self.linear(g, x, &format!("{name}.fc1"))?;
        let h = match self.cfg.activation {
            Activation::Relu => g.relu(h),
            Activation::Gelu => g.gelu(h),
        };
        self.linear(g, h, &format!("{name}.fc2"))
    }

    /// `x + Dropout(f)` followed by layer norm.
    fn residual(&self, g: &mut Graph, x: Var, f: Var, norm: &str) -> Result<Var> {
        let f = g.dropout(f, self.cfg.dropout)?;
        let y = g.add(x, f)?;
        self.norm(g, y, norm)
    }

    /// Post-norm encoder block over the second-to-last axis.
    pub fn encoder_block(&self, g: &mut Graph, z: Var, name: &str) -> Result<Var> {
        let a = self.attention(g, z, z, &format!("{name}.attn"))?;
        let z1 = self.residual(g, z, a, &format!("{name}.ln1"))?;
        let f = self.ffn(g, z1, &format!("{name}.ffn"))?;
        self.residual(g, z1, f, &format!("{name}.ln2"))
    }

    /// `[B, L, N]` window to `[B, N, L_p, d]` patch tokens with positions added.
    pub fn patch_tokenize(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let xt = g.transpose(x)?;
        let tokens = g.conv1d(xt, self.p.get("patch.w"), self.p.get("patch.b"), self.cfg.effective_patch())?;
        let pe = g.constant(positional_encoding(self.cfg.n_patches(), self.cfg.d_model));
        g.add(tokens, pe)
    }

    pub fn temporal_encode(&self, g: &mut Graph, tokens: Var) -> Result<Var> {
        let mut z = tokens;
        for l in 0..self.cfg.temporal_depth {
            z = self.encoder_block(g, z, &format!("temporal.{l}"))?;
        }
        Ok(z)
    }

    /// Token-mean of each node's memory plus its node embedding, `[B, N, d]`.
    pub fn pooled_nodes(&self, g: &mut Graph, memory: Var) -> Result<Var> {
        let u = g.mean_axis(memory, 2)?;
        let n = g.shape(u)[1];
        let idx: Vec<usize> = (0..n).collect();
        let e = g.embedding(self.p.get("node_emb"), &idx)?;
        g.add(u, e)
    }

    pub fn spatial_encode(&self, g: &mut Graph, mixed: Var) -> Result<Var> {
        let mut z = mixed;
        for l in 0..self.cfg.spatial_depth {
            z = self.encoder_block(g, z, &format!("spatial.{l}"))?;
        }
        Ok(z)
    }

    /// Decoder over `[B, N, M, d]` memory, returning `[B, H, N]`.
    pub fn decode(&self, g: &mut Graph, memory: Var) -> Result<Var> {
        let s = g.shape(memory).to_vec();
        let (b, n, d, hz) = (s[0], s[1], self.cfg.d_model, self.cfg.horizon);
        let pe = g.constant(positional_encoding(hz, d));
        let q0 = g.add(self.p.get("decoder.query"), pe)?;
        let mut q = g.broadcast_to(q0, &[b, n, hz, d])?;
        for l in 0..self.cfg.decoder_depth() {
            let name = format!("decoder.{l}");
            let a = self.attention(g, q, q, &format!("{name}.self"))?;
            q = self.residual(g, q, a, &format!("{name}.ln1"))?;
            if self.cfg.ablation.has_cross_attention() {
                let c = self.attention(g, q, memory, &format!("{name}.cross"))?;
                q = self.residual(g, q, c, &format!("{name}.ln2"))?;
            }
            let f = self.ffn(g, q, &format!("{name}.ffn"))?;
            q = self.residual(g, q, f, &format!("{name}.ln3"))?;
        }
        let y = self.linear(g, q, "head")?;
        let y = g.reshape(y, &[b, n, hz])?;
        g.transpose(y)
    }

    /// Full forward pass: window `[B, L, N]`, row-normalized adjacency
    /// `[B, N, N]` → forecast `[B, H, N]`.
    pub fn forward(&self, g: &mut Graph, x: Var, adj: Var) -> Result<Var> {
        let cfg = self.cfg;
        let xs = g.shape(x).to_vec();
        let (b, n) = (xs[0], xs[2]);
        let d = cfg.d_model;
        match cfg.ablation {
            Ablation::NoCrossAttn => {
                // Nothing from the window reaches the decoder; skip the encoders.
                let memory = g.constant(Tensor::zeros(&[b, n, 1, d]));
                self.decode(g, memory)
            }
            Ablation::DecoderOnly => {
                let tokens = self.patch_tokenize(g, x)?;
                let pooled = self.pooled_nodes(g, tokens)?;
                let memory = g.reshape(pooled, &[b, n, 1, d])?;
                self.decode(g, memory)
            }
            Ablation::Full | Ablation::NoPatch | Ablation::EncoderOnly => {
                let tokens = self.patch_tokenize(g, x)?;
                let m_time = self.temporal_encode(g, tokens)?;
                let h0 = self.pooled_nodes(g, m_time)?;
                let mixed = spatial_mix(g, adj, h0)?;
                let s = self.spatial_encode(g, mixed)?;
                let s = g.reshape(s, &[b, n, 1, d])?;
                let memory = g.concat(&[m_time, s], 2)?;
                if cfg.ablation == Ablation::EncoderOnly {
                    let pooled = g.mean_axis(memory, 2)?;
                    let y = self.linear(g, pooled, "head")?;
                    g.transpose(y)
                } else {
                    self.decode(g, memory)
                }
            }
        }
    }
}

/// `A · H0` for row-normalized `A`.
pub fn spatial_mix(g: &mut Graph, adj: Var, h0: Var) -> Result<Var> {
    g.matmul(adj, h0)
}
