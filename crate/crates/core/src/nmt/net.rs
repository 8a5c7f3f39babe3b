//! Parameter storage, initialization, and assembly of the encoder-decoder
//! forward graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId, Scalar, Tensor};
use super::ModelConfig;

/// Named parameter tensors in a fixed, deterministic order.
#[derive(Debug, Clone)]
pub struct ParamSet<F> {
    pub entries: Vec<(String, Tensor<F>)>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn index_of(&self, name: &str) -> usize {
        self.entries
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn tensor(&self, name: &str) -> &Tensor<F> {
        &self.entries[self.index_of(name)].1
    }
}

/// Box-Muller standard normal; deterministic given the rng stream and
/// identical across scalar types (draws happen in f64).
fn normal<F: Scalar>(rng: &mut ChaCha8Rng, std: f64) -> F {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    F::from_f64((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * std)
}

fn xavier<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<F> {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| normal(rng, std)).collect();
    Tensor::from_rows(rows, cols, data)
}

fn zeros<F: Scalar>(rows: usize, cols: usize) -> Tensor<F> {
    Tensor::zeros(rows, cols)
}

fn ones<F: Scalar>(cols: usize) -> Tensor<F> {
    Tensor::from_rows(1, cols, vec![F::one(); cols])
}

/// The full parameter layout for a configuration: names with shapes, in the
/// fixed order used for initialization, optimizer state, and checkpoints.
pub fn param_layout(cfg: &ModelConfig, vocab_size: usize) -> Vec<(String, (usize, usize))> {
    let d = cfg.embedding_dim;
    let mut out: Vec<(String, (usize, usize))> = vec![("embed".into(), (vocab_size, d))];
    let layernorm = |out: &mut Vec<(String, (usize, usize))>, prefix: &str| {
        out.push((format!("{prefix}.g"), (1, d)));
        out.push((format!("{prefix}.b"), (1, d)));
    };
    let attention = |out: &mut Vec<(String, (usize, usize))>, prefix: &str| {
        for w in ["wq", "wk", "wv", "wo"] {
            out.push((format!("{prefix}.{w}"), (d, d)));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            out.push((format!("{prefix}.{b}"), (1, d)));
        }
    };
    let ff = |out: &mut Vec<(String, (usize, usize))>, prefix: &str| {
        out.push((format!("{prefix}.w1"), (d, cfg.ff_dim)));
        out.push((format!("{prefix}.b1"), (1, cfg.ff_dim)));
        out.push((format!("{prefix}.w2"), (cfg.ff_dim, d)));
        out.push((format!("{prefix}.b2"), (1, d)));
    };
    for l in 0..cfg.encoder_layers {
        layernorm(&mut out, &format!("enc{l}.ln1"));
        attention(&mut out, &format!("enc{l}.attn"));
        layernorm(&mut out, &format!("enc{l}.ln2"));
        ff(&mut out, &format!("enc{l}.ff"));
    }
    layernorm(&mut out, "enc_final_ln");
    for l in 0..cfg.decoder_layers {
        layernorm(&mut out, &format!("dec{l}.ln1"));
        attention(&mut out, &format!("dec{l}.self"));
        layernorm(&mut out, &format!("dec{l}.ln2"));
        attention(&mut out, &format!("dec{l}.cross"));
        layernorm(&mut out, &format!("dec{l}.ln3"));
        ff(&mut out, &format!("dec{l}.ff"));
    }
    layernorm(&mut out, "final_ln");
    out.push(("out.w".into(), (vocab_size, d)));
    out.push(("out.b".into(), (1, vocab_size)));
    out
}

fn is_layernorm_gain(name: &str) -> bool {
    name.ends_with(".g")
}

fn is_bias(name: &str) -> bool {
    name.rsplit('.')
        .next()
        .map(|last| last.starts_with('b'))
        .unwrap_or(false)
}

/// Fresh parameters for the configured architecture, seeded from the config:
/// Xavier-normal weights, zero biases, unit layernorm gains.
pub fn init_params<F: Scalar>(cfg: &ModelConfig, vocab_size: usize) -> ParamSet<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let entries = param_layout(cfg, vocab_size)
        .into_iter()
        .map(|(name, (rows, cols))| {
            let t = if is_layernorm_gain(&name) {
                ones(cols)
            } else if is_bias(&name) {
                zeros(rows, cols)
            } else {
                xavier(&mut rng, rows, cols)
            };
            (name, t)
        })
        .collect();
    ParamSet { entries }
}

/// Sinusoidal position encodings for `len` positions.
pub fn position_encoding<F: Scalar>(len: usize, dim: usize) -> Tensor<F> {
    let mut t = Tensor::zeros(len, dim);
    for pos in 0..len {
        for i in 0..dim {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            t.data[pos * dim + i] = F::from_f64(v);
        }
    }
    t
}

/// Optional train-time dropout stream. `None` disables dropout entirely.
pub struct DropoutStream {
    rng: ChaCha8Rng,
    rate: f64,
}

impl DropoutStream {
    pub fn new(seed: u64, rate: f64) -> Option<Self> {
        (rate > 0.0).then(|| Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            rate,
        })
    }

    fn mask<F: Scalar>(&mut self, len: usize) -> Vec<F> {
        let keep = 1.0 - self.rate;
        let scale = F::from_f64(1.0 / keep);
        (0..len)
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    scale
                } else {
                    F::zero()
                }
            })
            .collect()
    }
}

/// One forward assembly over a graph: parameters are bound as leaves once and
/// addressed by name.
pub struct NetBuilder<'a, F: Scalar> {
    pub graph: Graph<F>,
    cfg: &'a ModelConfig,
    param_ids: Vec<NodeId>,
    params: &'a ParamSet<F>,
    dropout: Option<&'a mut DropoutStream>,
}

impl<'a, F: Scalar> NetBuilder<'a, F> {
    pub fn new(
        cfg: &'a ModelConfig,
        params: &'a ParamSet<F>,
        dropout: Option<&'a mut DropoutStream>,
    ) -> Self {
        let mut graph = Graph::new();
        let param_ids = params
            .entries
            .iter()
            .map(|(_, t)| graph.leaf(t.clone()))
            .collect();
        Self {
            graph,
            cfg,
            param_ids,
            params,
            dropout,
        }
    }

    pub fn param(&self, name: &str) -> NodeId {
        self.param_ids[self.params.index_of(name)]
    }

    /// Gradient tensors in parameter order (call after `backward`).
    pub fn param_grads(&self) -> Vec<Tensor<F>> {
        self.param_ids.iter().map(|&id| self.graph.grad(id)).collect()
    }

    fn maybe_dropout(&mut self, x: NodeId) -> NodeId {
        match self.dropout.as_deref_mut() {
            Some(stream) => {
                let len = self.graph.value(x).len();
                let mask = stream.mask(len);
                self.graph.dropout(x, mask)
            }
            None => x,
        }
    }

    fn embed(&mut self, ids: &[usize]) -> NodeId {
        let table = self.param("embed");
        let gathered = self.graph.gather(table, ids);
        let pos = position_encoding::<F>(ids.len(), self.cfg.embedding_dim);
        let pos = self.graph.leaf(pos);
        let summed = self.graph.add(gathered, pos);
        self.maybe_dropout(summed)
    }

    /// Multi-head attention of `queries` over `keys_values`.
    fn attention(&mut self, prefix: &str, queries: NodeId, keys_values: NodeId, causal: bool) -> NodeId {
        let g = &mut self.graph;
        let q = {
            let w = self.param_ids[self.params.index_of(&format!("{prefix}.wq"))];
            let b = self.param_ids[self.params.index_of(&format!("{prefix}.bq"))];
            let m = g.matmul(queries, w);
            g.add_row(m, b)
        };
        let k = {
            let w = self.param_ids[self.params.index_of(&format!("{prefix}.wk"))];
            let b = self.param_ids[self.params.index_of(&format!("{prefix}.bk"))];
            let m = g.matmul(keys_values, w);
            g.add_row(m, b)
        };
        let v = {
            let w = self.param_ids[self.params.index_of(&format!("{prefix}.wv"))];
            let b = self.param_ids[self.params.index_of(&format!("{prefix}.bv"))];
            let m = g.matmul(keys_values, w);
            g.add_row(m, b)
        };
        let heads = self.cfg.attention_heads;
        let dh = self.cfg.embedding_dim / heads;
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let mut contexts = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let scores = g.matmul_tb(qh, kh);
            let scaled = g.scale(scores, scale);
            let probs = g.softmax_rows(scaled, causal);
            contexts.push(g.matmul(probs, vh));
        }
        let ctx = g.concat_cols(&contexts);
        let wo = self.param_ids[self.params.index_of(&format!("{prefix}.wo"))];
        let bo = self.param_ids[self.params.index_of(&format!("{prefix}.bo"))];
        let m = g.matmul(ctx, wo);
        g.add_row(m, bo)
    }

    fn layer_norm(&mut self, prefix: &str, x: NodeId) -> NodeId {
        let gamma = self.param(&format!("{prefix}.g"));
        let beta = self.param(&format!("{prefix}.b"));
        self.graph.layer_norm(x, gamma, beta)
    }

    fn feed_forward(&mut self, prefix: &str, x: NodeId) -> NodeId {
        let w1 = self.param(&format!("{prefix}.w1"));
        let b1 = self.param(&format!("{prefix}.b1"));
        let w2 = self.param(&format!("{prefix}.w2"));
        let b2 = self.param(&format!("{prefix}.b2"));
        let g = &mut self.graph;
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.relu(h);
        let h = g.matmul(h, w2);
        g.add_row(h, b2)
    }

    /// Pre-norm encoder stack over the source token ids.
    pub fn encode(&mut self, source: &[usize]) -> NodeId {
        let mut x = self.embed(source);
        for l in 0..self.cfg.encoder_layers {
            let normed = self.layer_norm(&format!("enc{l}.ln1"), x);
            let attn = self.attention(&format!("enc{l}.attn"), normed, normed, false);
            let attn = self.maybe_dropout(attn);
            x = self.graph.add(x, attn);
            let normed = self.layer_norm(&format!("enc{l}.ln2"), x);
            let ff = self.feed_forward(&format!("enc{l}.ff"), normed);
            let ff = self.maybe_dropout(ff);
            x = self.graph.add(x, ff);
        }
        self.layer_norm("enc_final_ln", x)
    }

    /// Pre-norm decoder over `dec_input` ids attending to the encoder output;
    /// returns per-position probability rows over the vocabulary.
    pub fn decode(&mut self, enc_out: NodeId, dec_input: &[usize]) -> NodeId {
        let mut x = self.embed(dec_input);
        for l in 0..self.cfg.decoder_layers {
            let normed = self.layer_norm(&format!("dec{l}.ln1"), x);
            let attn = self.attention(&format!("dec{l}.self"), normed, normed, true);
            let attn = self.maybe_dropout(attn);
            x = self.graph.add(x, attn);
            let normed = self.layer_norm(&format!("dec{l}.ln2"), x);
            let cross = self.attention(&format!("dec{l}.cross"), normed, enc_out, false);
            let cross = self.maybe_dropout(cross);
            x = self.graph.add(x, cross);
            let normed = self.layer_norm(&format!("dec{l}.ln3"), x);
            let ff = self.feed_forward(&format!("dec{l}.ff"), normed);
            let ff = self.maybe_dropout(ff);
            x = self.graph.add(x, ff);
        }
        let x = self.layer_norm("final_ln", x);
        let out_w = self.param("out.w");
        let out_b = self.param("out.b");
        let logits = self.graph.matmul_tb(x, out_w);
        let logits = self.graph.add_row(logits, out_b);
        self.graph.softmax_rows(logits, false)
    }
}
