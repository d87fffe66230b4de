//! The hybrid scoring network: embedding lookup, bidirectional LSTM,
//! additive attention, attention-weighted pooling and a five-way sigmoid
//! head, with a hand-written backward pass.
//!
//! LSTM gate rows are stacked in the order input, forget, candidate,
//! output. Each direction starts from zero state and runs only over the
//! unmasked prefix of the sequence; masked rows of the state matrix stay
//! zero and receive no attention.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, glorot_bound, sigmoid_scalar, softmax_masked, uniform_init, Matrix, Rng};
use crate::text::{TokenSequence, Vocabulary, PAD_ID};
use crate::training::{NeuralModel, ParamTensors};
use crate::{AspectLabels, AspectScores, NUM_ASPECTS};

/// Probability clamp used by [`bce_loss`].
pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnnDims {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_hid: usize,
    pub d_att: usize,
    pub max_len: usize,
}

impl HnnDims {
    pub fn new(vocab_size: usize) -> Self {
        HnnDims {
            vocab_size,
            d_emb: 32,
            d_hid: 32,
            d_att: 16,
            max_len: crate::text::DEFAULT_MAX_LEN,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.d_emb == 0 || self.d_hid == 0 || self.d_att == 0 || self.max_len == 0 {
            return Err(Error::Contract(format!("invalid network dimensions {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmDirectionParams {
    /// Input weights, `4·d_hid × d_emb`.
    pub w: Matrix,
    /// Recurrent weights, `4·d_hid × d_hid`.
    pub u: Matrix,
    /// Biases, `4·d_hid × 1`.
    pub b: Matrix,
}

impl LstmDirectionParams {
    pub fn zeros(d_emb: usize, d_hid: usize) -> Self {
        LstmDirectionParams {
            w: Matrix::zeros(4 * d_hid, d_emb),
            u: Matrix::zeros(4 * d_hid, d_hid),
            b: Matrix::zeros(4 * d_hid, 1),
        }
    }

    pub fn d_hid(&self) -> usize {
        self.u.cols()
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    fn init(rng: &mut Rng, d_emb: usize, d_hid: usize) -> Result<Self> {
        let w = uniform_init(rng, 4 * d_hid, d_emb, glorot_bound(d_emb, 4 * d_hid))?;
        let u = uniform_init(rng, 4 * d_hid, d_hid, glorot_bound(d_hid, 4 * d_hid))?;
        let mut b = Matrix::zeros(4 * d_hid, 1);
        // Forget-gate bias starts at 1.
        b.data_mut()[d_hid..2 * d_hid].fill(1.0);
        Ok(LstmDirectionParams { w, u, b })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// `d_att × 2·d_hid`
    pub w: Matrix,
    /// `d_att × 1`
    pub b: Matrix,
    /// `d_att × 1`
    pub v: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `5 × 2·d_hid`
    pub w: Matrix,
    /// `5 × 1`
    pub b: Matrix,
}

/// Every trainable tensor of the network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HnnParams {
    /// `vocab_size × d_emb`; row 0 (PAD) is kept at zero.
    pub embedding: Matrix,
    pub forward_lstm: LstmDirectionParams,
    pub backward_lstm: LstmDirectionParams,
    pub attention: AttentionParams,
    pub head: HeadParams,
}

impl HnnParams {
    pub fn zeros(dims: &HnnDims) -> Self {
        let two_h = 2 * dims.d_hid;
        HnnParams {
            embedding: Matrix::zeros(dims.vocab_size, dims.d_emb),
            forward_lstm: LstmDirectionParams::zeros(dims.d_emb, dims.d_hid),
            backward_lstm: LstmDirectionParams::zeros(dims.d_emb, dims.d_hid),
            attention: AttentionParams {
                w: Matrix::zeros(dims.d_att, two_h),
                b: Matrix::zeros(dims.d_att, 1),
                v: Matrix::zeros(dims.d_att, 1),
            },
            head: HeadParams {
                w: Matrix::zeros(NUM_ASPECTS, two_h),
                b: Matrix::zeros(NUM_ASPECTS, 1),
            },
        }
    }
}

impl ParamTensors for HnnParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![
            &self.embedding,
            &self.forward_lstm.w,
            &self.forward_lstm.u,
            &self.forward_lstm.b,
            &self.backward_lstm.w,
            &self.backward_lstm.u,
            &self.backward_lstm.b,
            &self.attention.w,
            &self.attention.b,
            &self.attention.v,
            &self.head.w,
            &self.head.b,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.embedding,
            &mut self.forward_lstm.w,
            &mut self.forward_lstm.u,
            &mut self.forward_lstm.b,
            &mut self.backward_lstm.w,
            &mut self.backward_lstm.u,
            &mut self.backward_lstm.b,
            &mut self.attention.w,
            &mut self.attention.b,
            &mut self.attention.v,
            &mut self.head.w,
            &mut self.head.b,
        ]
    }

    fn tensor_names(&self) -> Vec<&'static str> {
        vec![
            "embedding",
            "forward_lstm.w",
            "forward_lstm.u",
            "forward_lstm.b",
            "backward_lstm.w",
            "backward_lstm.u",
            "backward_lstm.b",
            "attention.w",
            "attention.b",
            "attention.v",
            "head.w",
            "head.b",
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub table: Matrix,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HnnModel {
    pub dims: HnnDims,
    pub embedding_trainable: bool,
    pub params: HnnParams,
}

impl HnnModel {
    /// All-zero parameters: every input scores 0.5 on every aspect.
    pub fn zeros(dims: HnnDims) -> Result<Self> {
        dims.validate()?;
        Ok(HnnModel {
            dims,
            embedding_trainable: true,
            params: HnnParams::zeros(&dims),
        })
    }

    /// Glorot-uniform weights, zero biases, forget-gate bias 1.
    pub fn init(dims: HnnDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = Rng::new(seed);
        let (e, h, a) = (dims.d_emb, dims.d_hid, dims.d_att);
        let mut embedding = uniform_init(&mut rng, dims.vocab_size, e, glorot_bound(dims.vocab_size, e))?;
        embedding.row_mut(PAD_ID).fill(0.0);
        let forward_lstm = LstmDirectionParams::init(&mut rng, e, h)?;
        let backward_lstm = LstmDirectionParams::init(&mut rng, e, h)?;
        let attention = AttentionParams {
            w: uniform_init(&mut rng, a, 2 * h, glorot_bound(2 * h, a))?,
            b: Matrix::zeros(a, 1),
            v: uniform_init(&mut rng, a, 1, glorot_bound(a, 1))?,
        };
        let head = HeadParams {
            w: uniform_init(&mut rng, NUM_ASPECTS, 2 * h, glorot_bound(2 * h, NUM_ASPECTS))?,
            b: Matrix::zeros(NUM_ASPECTS, 1),
        };
        Ok(HnnModel {
            dims,
            embedding_trainable: true,
            params: HnnParams {
                embedding,
                forward_lstm,
                backward_lstm,
                attention,
                head,
            },
        })
    }

    /// Replaces the embedding table (e.g. with pretrained vectors).
    pub fn set_embeddings(&mut self, table: EmbeddingTable) -> Result<()> {
        if table.table.shape() != (self.dims.vocab_size, self.dims.d_emb) {
            return Err(Error::Format(format!(
                "embedding table is {}x{}, model expects {}x{}",
                table.table.rows(),
                table.table.cols(),
                self.dims.vocab_size,
                self.dims.d_emb
            )));
        }
        self.params.embedding = table.table;
        self.params.embedding.row_mut(PAD_ID).fill(0.0);
        self.embedding_trainable = table.trainable;
        Ok(())
    }

    pub fn embedding_table(&self) -> EmbeddingTable {
        EmbeddingTable {
            table: self.params.embedding.clone(),
            trainable: self.embedding_trainable,
        }
    }

    /// Order-sensitive hash of the parameter bits; ties caches to the
    /// parameters they were computed from.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.params.tensors() {
            for v in t.data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    fn check_sequence(&self, seq: &TokenSequence) -> Result<()> {
        if seq.ids.len() != self.dims.max_len || seq.mask.len() != self.dims.max_len {
            return Err(Error::Shape {
                op: "forward",
                left: format!("sequence len {}", seq.ids.len()),
                right: format!("model max_len {}", self.dims.max_len),
            });
        }
        // Ids under the mask are ignored, so only the mask layout is checked.
        if seq.true_length > seq.mask.len() || seq.mask.iter().enumerate().any(|(t, &m)| m != (t < seq.true_length)) {
            return Err(Error::Contract("token sequence mask is not left-aligned".into()));
        }
        Ok(())
    }

    pub fn forward(&self, seq: &TokenSequence) -> Result<(AspectScores, ForwardCache)> {
        self.check_sequence(seq)?;
        let p = &self.params;
        let len = seq.true_length;
        let embedded = embed(seq, &EmbeddingView(&p.embedding))?;
        let fwd = run_direction(&embedded, len, &p.forward_lstm, false);
        let bwd = run_direction(&embedded, len, &p.backward_lstm, true);
        let states = assemble_states(self.dims.max_len, self.dims.d_hid, &fwd, &bwd);

        let (att_hidden, weights, context) = if len == 0 {
            // Empty response: nothing to attend to, the context is zero and
            // the scores come from the head bias alone.
            (Vec::new(), vec![0.0; self.dims.max_len], vec![0.0; 2 * self.dims.d_hid])
        } else {
            let (hidden, scores) = attention_scores(&states, &seq.mask, &p.attention);
            let weights = softmax_masked(&scores, &seq.mask)?;
            let context = aggregate(&states, &weights);
            (hidden, weights, context)
        };

        let mut logits = p.head.b.data().to_vec();
        p.head.w.mul_vec_add(&context, &mut logits);
        let mut probs = [0.0; NUM_ASPECTS];
        for (pr, z) in probs.iter_mut().zip(&logits) {
            *pr = sigmoid_scalar(*z);
        }
        let cache = ForwardCache {
            dims: self.dims,
            checksum: self.checksum(),
            ids: seq.ids[..len].to_vec(),
            fwd,
            bwd,
            states,
            att_hidden,
            weights,
            context,
            probs,
        };
        Ok((AspectScores(probs), cache))
    }

    pub fn backward(&self, cache: &ForwardCache, labels: &AspectLabels) -> Result<HnnParams> {
        if cache.dims != self.dims || cache.checksum != self.checksum() {
            return Err(Error::Contract(
                "forward cache does not belong to this model's current parameters".into(),
            ));
        }
        let p = &self.params;
        let mut g = HnnParams::zeros(&self.dims);
        let h = self.dims.d_hid;
        let len = cache.ids.len();

        let dlogits: Vec<f64> = cache
            .probs
            .iter()
            .zip(labels)
            .map(|(&pr, &y)| (pr - y as f64) / NUM_ASPECTS as f64)
            .collect();
        g.head.w.add_outer(&dlogits, &cache.context);
        g.head.b.data_mut().copy_from_slice(&dlogits);
        if len == 0 {
            return Ok(g);
        }
        let mut dcontext = vec![0.0; 2 * h];
        p.head.w.tr_mul_vec_add(&dlogits, &mut dcontext);

        // Pooling and softmax.
        let mut dstates = Matrix::zeros(len, 2 * h);
        let mut dweights = vec![0.0; len];
        for t in 0..len {
            let s = cache.states.row(t);
            dweights[t] = dot(&dcontext, s);
            for (d, &c) in dstates.row_mut(t).iter_mut().zip(&dcontext) {
                *d += cache.weights[t] * c;
            }
        }
        let mean_dw: f64 = (0..len).map(|t| cache.weights[t] * dweights[t]).sum();

        // Additive scoring.
        let v = p.attention.v.data();
        let mut dz = vec![0.0; self.dims.d_att];
        for t in 0..len {
            let dscore = cache.weights[t] * (dweights[t] - mean_dw);
            let hidden = &cache.att_hidden[t];
            for (gv, &a) in g.attention.v.data_mut().iter_mut().zip(hidden) {
                *gv += dscore * a;
            }
            for k in 0..dz.len() {
                dz[k] = dscore * v[k] * (1.0 - hidden[k] * hidden[k]);
            }
            g.attention.w.add_outer(&dz, cache.states.row(t));
            for (gb, &d) in g.attention.b.data_mut().iter_mut().zip(&dz) {
                *gb += d;
            }
            p.attention.w.tr_mul_vec_add(&dz, dstates.row_mut(t));
        }

        let mut dembedded = Matrix::zeros(len, self.dims.d_emb);
        direction_backward(&cache.fwd, &p.forward_lstm, &dstates, 0, &mut g.forward_lstm, &mut dembedded);
        direction_backward(&cache.bwd, &p.backward_lstm, &dstates, h, &mut g.backward_lstm, &mut dembedded);

        for (t, &id) in cache.ids.iter().enumerate() {
            if id == PAD_ID {
                continue;
            }
            for (ge, &d) in g.embedding.row_mut(id).iter_mut().zip(dembedded.row(t)) {
                *ge += d;
            }
        }
        g.embedding.row_mut(PAD_ID).fill(0.0);
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: HnnModel = serde_json::from_str(s)?;
        m.validate_shapes()?;
        Ok(m)
    }

    pub fn validate_shapes(&self) -> Result<()> {
        self.dims.validate()?;
        let expected = HnnParams::zeros(&self.dims);
        for ((name, got), want) in self
            .params
            .tensor_names()
            .into_iter()
            .zip(self.params.tensors())
            .zip(expected.tensors())
        {
            if got.shape() != want.shape() {
                return Err(Error::Format(format!(
                    "{name} is {}x{}, dims imply {}x{}",
                    got.rows(),
                    got.cols(),
                    want.rows(),
                    want.cols()
                )));
            }
        }
        Ok(())
    }
}

impl NeuralModel for HnnModel {
    type Input = TokenSequence;
    type Params = HnnParams;

    fn params(&self) -> &HnnParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut HnnParams {
        &mut self.params
    }

    fn predict(&self, input: &TokenSequence) -> Result<AspectScores> {
        Ok(self.forward(input)?.0)
    }

    fn loss_and_gradients(&self, input: &TokenSequence, labels: &AspectLabels) -> Result<(f64, HnnParams)> {
        let (scores, cache) = self.forward(input)?;
        let grads = self.backward(&cache, labels)?;
        Ok((bce_loss(&scores, labels), grads))
    }

    fn frozen(&self) -> Vec<bool> {
        let mut f = vec![false; self.params.tensors().len()];
        f[0] = !self.embedding_trainable;
        f
    }
}

/// Everything `backward` needs from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: HnnDims,
    checksum: u64,
    ids: Vec<usize>,
    fwd: Vec<StepCache>,
    bwd: Vec<StepCache>,
    states: Matrix,
    att_hidden: Vec<Vec<f64>>,
    weights: Vec<f64>,
    context: Vec<f64>,
    probs: [f64; NUM_ASPECTS],
}

impl ForwardCache {
    pub fn attention_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn states(&self) -> &Matrix {
        &self.states
    }

    pub fn context(&self) -> &[f64] {
        &self.context
    }
}

/// Activations of one LSTM step.
#[derive(Debug, Clone)]
struct StepCache {
    pos: usize,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

/// Borrowed view used by [`embed`] so the model need not clone its table.
pub struct EmbeddingView<'a>(pub &'a Matrix);

impl<'a> From<&'a EmbeddingTable> for EmbeddingView<'a> {
    fn from(t: &'a EmbeddingTable) -> Self {
        EmbeddingView(&t.table)
    }
}

/// Looks up one embedding row per position; masked positions get the PAD
/// (zero) row.
pub fn embed(seq: &TokenSequence, emb: &EmbeddingView<'_>) -> Result<Matrix> {
    let table = emb.0;
    let mut out = Matrix::zeros(seq.ids.len(), table.cols());
    for (t, (&id, &m)) in seq.ids.iter().zip(&seq.mask).enumerate() {
        if id >= table.rows() {
            return Err(Error::Index {
                what: "embedding table",
                index: id,
                len: table.rows(),
            });
        }
        if m {
            out.row_mut(t).copy_from_slice(table.row(id));
        }
    }
    Ok(out)
}

fn lstm_step(pos: usize, x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmDirectionParams) -> StepCache {
    let h = p.d_hid();
    let mut pre = p.b.data().to_vec();
    p.w.mul_vec_add(x, &mut pre);
    p.u.mul_vec_add(h_prev, &mut pre);
    let i: Vec<f64> = pre[..h].iter().map(|&z| sigmoid_scalar(z)).collect();
    let f: Vec<f64> = pre[h..2 * h].iter().map(|&z| sigmoid_scalar(z)).collect();
    let g: Vec<f64> = pre[2 * h..3 * h].iter().map(|&z| z.tanh()).collect();
    let o: Vec<f64> = pre[3 * h..].iter().map(|&z| sigmoid_scalar(z)).collect();
    let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let hv: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
    StepCache {
        pos,
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        tanh_c,
        c,
        h: hv,
    }
}

/// One LSTM step: returns the new hidden and cell state.
pub fn lstm_cell(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmDirectionParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != p.d_in() || h_prev.len() != p.d_hid() || c_prev.len() != p.d_hid() {
        return Err(Error::Shape {
            op: "lstm_cell",
            left: format!("x {} h {} c {}", x.len(), h_prev.len(), c_prev.len()),
            right: format!("d_emb {} d_hid {}", p.d_in(), p.d_hid()),
        });
    }
    let step = lstm_step(0, x, h_prev, c_prev, p);
    Ok((step.h, step.c))
}

fn run_direction(embedded: &Matrix, len: usize, p: &LstmDirectionParams, reverse: bool) -> Vec<StepCache> {
    let h = p.d_hid();
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    };
    let mut steps = Vec::with_capacity(len);
    for t in order {
        let step = lstm_step(t, embedded.row(t), &h_prev, &c_prev, p);
        h_prev.clone_from(&step.h);
        c_prev.clone_from(&step.c);
        steps.push(step);
    }
    steps
}

fn assemble_states(max_len: usize, d_hid: usize, fwd: &[StepCache], bwd: &[StepCache]) -> Matrix {
    let mut states = Matrix::zeros(max_len, 2 * d_hid);
    for s in fwd {
        states.row_mut(s.pos)[..d_hid].copy_from_slice(&s.h);
    }
    for s in bwd {
        states.row_mut(s.pos)[d_hid..].copy_from_slice(&s.h);
    }
    states
}

/// Bidirectional pass. Row `t` is `[forward h_t, backward h_t]` for
/// unmasked `t`, zero elsewhere. `mask` must be left-aligned.
pub fn bilstm(embedded: &Matrix, mask: &[bool], fwd: &LstmDirectionParams, bwd: &LstmDirectionParams) -> Result<Matrix> {
    if embedded.rows() != mask.len() || embedded.cols() != fwd.d_in() || fwd.w.shape() != bwd.w.shape() || fwd.u.shape() != bwd.u.shape() {
        return Err(Error::Shape {
            op: "bilstm",
            left: format!("embedded {}x{} mask {}", embedded.rows(), embedded.cols(), mask.len()),
            right: format!("lstm input {}", fwd.d_in()),
        });
    }
    let len = mask.iter().take_while(|&&m| m).count();
    let f = run_direction(embedded, len, fwd, false);
    let b = run_direction(embedded, len, bwd, true);
    Ok(assemble_states(mask.len(), fwd.d_hid(), &f, &b))
}

/// Returns per-position `tanh(W_a s_t + b_a)` and the scores
/// `v · tanh(...)`; masked positions score 0 and get no hidden vector.
fn attention_scores(states: &Matrix, mask: &[bool], p: &AttentionParams) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut hidden = Vec::new();
    let mut scores = vec![0.0; mask.len()];
    for (t, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let mut z = p.b.data().to_vec();
        p.w.mul_vec_add(states.row(t), &mut z);
        z.iter_mut().for_each(|v| *v = v.tanh());
        scores[t] = dot(p.v.data(), &z);
        hidden.push(z);
    }
    (hidden, scores)
}

pub fn attention_weights(states: &Matrix, mask: &[bool], p: &AttentionParams) -> Result<Vec<f64>> {
    if states.rows() != mask.len() || states.cols() != p.w.cols() {
        return Err(Error::Shape {
            op: "attention_weights",
            left: format!("states {}x{} mask {}", states.rows(), states.cols(), mask.len()),
            right: format!("attention input {}", p.w.cols()),
        });
    }
    let (_, scores) = attention_scores(states, mask, p);
    softmax_masked(&scores, mask)
}

/// Attention-weighted sum of state rows.
pub fn aggregate(states: &Matrix, weights: &[f64]) -> Vec<f64> {
    debug_assert_eq!(states.rows(), weights.len());
    let mut out = vec![0.0; states.cols()];
    for (t, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, &s) in out.iter_mut().zip(states.row(t)) {
            *o += w * s;
        }
    }
    out
}

fn direction_backward(
    steps: &[StepCache],
    p: &LstmDirectionParams,
    dstates: &Matrix,
    offset: usize,
    grads: &mut LstmDirectionParams,
    dembedded: &mut Matrix,
) {
    let h = p.d_hid();
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    for s in steps.iter().rev() {
        let ext = &dstates.row(s.pos)[offset..offset + h];
        for k in 0..h {
            let dh = ext[k] + dh_next[k];
            let dc = dc_next[k] + dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            let d_o = dh * s.tanh_c[k];
            let di = dc * s.g[k];
            let dg = dc * s.i[k];
            let df = dc * s.c_prev[k];
            dc_next[k] = dc * s.f[k];
            da[k] = di * s.i[k] * (1.0 - s.i[k]);
            da[h + k] = df * s.f[k] * (1.0 - s.f[k]);
            da[2 * h + k] = dg * (1.0 - s.g[k] * s.g[k]);
            da[3 * h + k] = d_o * s.o[k] * (1.0 - s.o[k]);
        }
        grads.w.add_outer(&da, &s.x);
        grads.u.add_outer(&da, &s.h_prev);
        for (gb, &d) in grads.b.data_mut().iter_mut().zip(&da) {
            *gb += d;
        }
        p.w.tr_mul_vec_add(&da, dembedded.row_mut(s.pos));
        dh_next.fill(0.0);
        p.u.tr_mul_vec_add(&da, &mut dh_next);
    }
}

/// Mean binary cross-entropy over the five aspects, with probabilities
/// clamped to `[ε, 1−ε]`.
pub fn bce_loss(scores: &AspectScores, labels: &AspectLabels) -> f64 {
    scores
        .0
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / NUM_ASPECTS as f64
}

/// Parses the text embedding format: one token per line followed by its
/// space-separated vector components.
pub fn parse_pretrained_embeddings(
    content: &str,
    vocab: &Vocabulary,
    expected_dim: Option<usize>,
    seed: u64,
) -> Result<EmbeddingTable> {
    let mut vectors: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut dim = expected_dim;
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap_or_default();
        let values = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad float: {e}"),
            })?;
        if values.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "token without vector".into(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: "non-finite vector component".into(),
            });
        }
        match dim {
            Some(d) if d != values.len() => {
                return Err(Error::Format(format!(
                    "line {line_no}: vector has {} components, expected {d}",
                    values.len()
                )))
            }
            None => dim = Some(values.len()),
            _ => {}
        }
        let id = vocab.id(token);
        let known = id != crate::text::UNK_ID || token == "<unk>";
        if known && id != PAD_ID {
            vectors[id] = Some(values);
        }
    }
    let dim = dim.ok_or_else(|| Error::Format("embedding file has no vectors and no dimension was given".into()))?;
    let mut rng = Rng::new(seed);
    let bound = glorot_bound(vocab.len(), dim);
    let mut table = Matrix::zeros(vocab.len(), dim);
    for (id, v) in vectors.into_iter().enumerate() {
        // Draw for every row so a row's random fill does not depend on
        // which other tokens the file happened to cover.
        let fill: Vec<f64> = (0..dim).map(|_| rng.uniform(bound)).collect();
        if id == PAD_ID {
            continue;
        }
        table.row_mut(id).copy_from_slice(v.as_deref().unwrap_or(&fill));
    }
    Ok(EmbeddingTable {
        table,
        trainable: false,
    })
}

pub fn load_pretrained_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    expected_dim: Option<usize>,
    seed: u64,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pretrained_embeddings(&content, vocab, expected_dim, seed)
}
