//! The staging networks: a residual per-epoch encoder, a per-epoch
//! embedding, dilated temporal convolutions over the epoch sequence and a
//! 1x1 classification head. The DSU variant inserts feature-statistics
//! perturbation, batch normalization and dropout before the head; the
//! pulse-rate variant swaps the encoder input for 60-sample IPR epochs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{EpochTensor, EPOCH_SAMPLES, IPR_SAMPLES_PER_EPOCH};
use crate::neural::{
    softmax_rows, BatchNorm, Checkpoint, Conv1d, Ctx, Dense, Dropout, Dsu, Layer, MaxPool, Mode, NamedTensor,
    NeuralError, Param, Relu, Tensor,
};
use crate::staging::{Hypnogram, Stage4};

pub const N_CLASSES: usize = 4;
/// Epochs encoded per chunk at inference; the encoder is time-distributed so
/// chunking does not change results.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("model is in {0:?} mode")]
    Mode(Mode),
    #[error("input holds {samples} samples, not a multiple of {per_epoch} per epoch")]
    Input { samples: usize, per_epoch: usize },
    #[error("checkpoint does not match the model: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Residual CNN encoder plus dilated temporal context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepPpgNetConfig {
    pub samples_per_epoch: usize,
    pub encoder_channels: Vec<usize>,
    pub encoder_kernel: usize,
    pub pool: usize,
    pub embed_dim: usize,
    pub context_kernel: usize,
    pub dilations: Vec<usize>,
}

impl SleepPpgNetConfig {
    /// Four blocks of stride-4 pooling: 1024 samples reduce to 4 positions.
    pub fn mini() -> Self {
        SleepPpgNetConfig {
            samples_per_epoch: EPOCH_SAMPLES,
            encoder_channels: vec![16, 32, 64, 128],
            encoder_kernel: 3,
            pool: 4,
            embed_dim: 128,
            context_kernel: 7,
            dilations: vec![1, 2, 4, 8, 16, 32],
        }
    }

    /// Half-width encoder, 64-wide context and three dilations; the
    /// mini topology at a size that trains in seconds on one core.
    pub fn desk() -> Self {
        SleepPpgNetConfig {
            encoder_channels: vec![8, 16, 32, 64],
            embed_dim: 64,
            context_kernel: 3,
            dilations: vec![1, 2, 4],
            ..SleepPpgNetConfig::mini()
        }
    }

    /// Eight stride-2 blocks and two passes of the dilation ladder.
    pub fn full() -> Self {
        SleepPpgNetConfig {
            samples_per_epoch: EPOCH_SAMPLES,
            encoder_channels: vec![16, 16, 32, 32, 64, 64, 128, 256],
            encoder_kernel: 3,
            pool: 2,
            embed_dim: 128,
            context_kernel: 7,
            dilations: vec![1, 2, 4, 8, 16, 32, 1, 2, 4, 8, 16, 32],
        }
    }

    fn encoded_len(&self) -> usize {
        self.encoder_channels
            .iter()
            .fold(self.samples_per_epoch, |l, _| l.div_ceil(self.pool))
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.samples_per_epoch == 0 || self.encoder_channels.is_empty() {
            return bad("encoder needs at least one block and a non-empty epoch");
        }
        if self.encoder_channels.contains(&0) || self.embed_dim == 0 {
            return bad("channel counts must be positive");
        }
        if self.pool == 0 || self.encoder_kernel == 0 || self.context_kernel == 0 {
            return bad("kernel and pool sizes must be positive");
        }
        if self.dilations.contains(&0) {
            return bad("dilations must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepPpgNet2Config {
    #[serde(flatten)]
    pub base: SleepPpgNetConfig,
    pub dsu_p: f64,
    pub dropout: f64,
}

impl SleepPpgNet2Config {
    pub fn mini() -> Self {
        SleepPpgNet2Config {
            base: SleepPpgNetConfig::mini(),
            dsu_p: 0.5,
            dropout: 0.2,
        }
    }
}

/// Pulse-rate benchmark: time-distributed residual blocks over 60-sample
/// epochs and a time-distributed dense head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtsConfig {
    pub samples_per_epoch: usize,
    pub encoder_channels: Vec<usize>,
    pub encoder_kernel: usize,
    pub pool: usize,
    pub hidden: usize,
}

impl Default for DtsConfig {
    fn default() -> Self {
        DtsConfig {
            samples_per_epoch: IPR_SAMPLES_PER_EPOCH,
            encoder_channels: vec![16, 32, 64],
            encoder_kernel: 3,
            pool: 2,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    SleepPpgNet(SleepPpgNetConfig),
    SleepPpgNet2(SleepPpgNet2Config),
    Dts(DtsConfig),
}

impl ModelConfig {
    /// Named presets: `sleepppgnet`, `sleepppgnet2`, `sleepppgnet-full`,
    /// `sleepppgnet2-full`, `dts`.
    pub fn preset(name: &str) -> Option<ModelConfig> {
        Some(match name.to_ascii_lowercase().as_str() {
            "sleepppgnet" | "sleepppg-net" => ModelConfig::SleepPpgNet(SleepPpgNetConfig::mini()),
            "sleepppgnet2" | "sleepppg-net2" => ModelConfig::SleepPpgNet2(SleepPpgNet2Config::mini()),
            "sleepppgnet-full" => ModelConfig::SleepPpgNet(SleepPpgNetConfig::full()),
            "sleepppgnet2-full" => ModelConfig::SleepPpgNet2(SleepPpgNet2Config {
                base: SleepPpgNetConfig::full(),
                ..SleepPpgNet2Config::mini()
            }),
            "sleepppgnet2-desk" => ModelConfig::SleepPpgNet2(SleepPpgNet2Config {
                base: SleepPpgNetConfig::desk(),
                ..SleepPpgNet2Config::mini()
            }),
            "dts" | "bm-dts" => ModelConfig::Dts(DtsConfig::default()),
            _ => return None,
        })
    }

    pub fn samples_per_epoch(&self) -> usize {
        match self {
            ModelConfig::SleepPpgNet(c) => c.samples_per_epoch,
            ModelConfig::SleepPpgNet2(c) => c.base.samples_per_epoch,
            ModelConfig::Dts(c) => c.samples_per_epoch,
        }
    }

    pub fn uses_pulse_rate(&self) -> bool {
        matches!(self, ModelConfig::Dts(_))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::SleepPpgNet(_) => "sleep_ppg_net",
            ModelConfig::SleepPpgNet2(_) => "sleep_ppg_net2",
            ModelConfig::Dts(_) => "dts",
        }
    }
}

/// Conv -> BN -> ReLU -> Conv -> BN, plus an identity (or 1x1 projection)
/// skip, ReLU, then max pooling.
#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv1d,
    bn1: BatchNorm,
    relu1: Relu,
    conv2: Conv1d,
    bn2: BatchNorm,
    skip: Option<Conv1d>,
    relu_out: Relu,
    pool: MaxPool,
}

impl ResBlock {
    fn new(name: &str, cin: usize, cout: usize, kernel: usize, pool: usize, rng: &mut ChaCha8Rng) -> Self {
        ResBlock {
            conv1: Conv1d::new(&format!("{name}.conv1"), cin, cout, kernel, 1, 1, rng),
            bn1: BatchNorm::new(&format!("{name}.bn1"), cout),
            relu1: Relu::new(),
            conv2: Conv1d::new(&format!("{name}.conv2"), cout, cout, kernel, 1, 1, rng),
            bn2: BatchNorm::new(&format!("{name}.bn2"), cout),
            skip: (cin != cout).then(|| Conv1d::new(&format!("{name}.skip"), cin, cout, 1, 1, 1, rng)),
            relu_out: Relu::new(),
            pool: MaxPool::new(pool),
        }
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let h = self.conv1.forward(x, ctx)?;
        let h = self.bn1.forward(&h, ctx)?;
        let h = self.relu1.forward(&h, ctx)?;
        let h = self.conv2.forward(&h, ctx)?;
        let mut h = self.bn2.forward(&h, ctx)?;
        match &mut self.skip {
            Some(proj) => h.add_assign(&proj.forward(x, ctx)?),
            None => h.add_assign(x),
        }
        let h = self.relu_out.forward(&h, ctx)?;
        Ok(self.pool.forward(&h, ctx)?)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.pool.backward(grad)?;
        let g = self.relu_out.backward(&g)?;
        let mut dx = match &mut self.skip {
            Some(proj) => proj.backward(&g)?,
            None => g.clone(),
        };
        let h = self.bn2.backward(&g)?;
        let h = self.conv2.backward(&h)?;
        let h = self.relu1.backward(&h)?;
        let h = self.bn1.backward(&h)?;
        dx.add_assign(&self.conv1.backward(&h)?);
        Ok(dx)
    }

    fn layers(&mut self) -> Vec<&mut dyn Layer> {
        let mut out: Vec<&mut dyn Layer> = vec![
            &mut self.conv1,
            &mut self.bn1,
            &mut self.relu1,
            &mut self.conv2,
            &mut self.bn2,
        ];
        if let Some(s) = &mut self.skip {
            out.push(s);
        }
        out.push(&mut self.relu_out);
        out.push(&mut self.pool);
        out
    }
}

/// `x + relu(conv_dilated(x))`.
#[derive(Debug, Clone)]
struct ContextBlock {
    conv: Conv1d,
    relu: Relu,
}

impl ContextBlock {
    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let h = self.conv.forward(x, ctx)?;
        let mut h = self.relu.forward(&h, ctx)?;
        h.add_assign(x);
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let h = self.relu.backward(grad)?;
        let mut dx = self.conv.backward(&h)?;
        dx.add_assign(grad);
        Ok(dx)
    }
}

/// The layers inserted after the temporal context in the DSU variant.
#[derive(Debug, Clone)]
pub struct Insert {
    pub dsu: Dsu,
    pub bn: BatchNorm,
    pub dropout: Dropout,
}

#[derive(Debug, Clone)]
enum Head {
    Linear(Conv1d),
    Mlp(Conv1d, Relu, Conv1d),
}

/// `[N, C, 1]` per-epoch rows to `[B, C, T]` sequences (`N = B * T`).
fn rows_to_sequence(x: &Tensor, b: usize, t: usize) -> Tensor {
    let c = x.channels();
    let mut y = Tensor::zeros([b, c, t]);
    for n in 0..b {
        for e in 0..t {
            for ch in 0..c {
                y.data[(n * c + ch) * t + e] = x.data[(n * t + e) * c + ch];
            }
        }
    }
    y
}

fn sequence_to_rows(y: &Tensor) -> Tensor {
    let [b, c, t] = y.shape;
    let mut x = Tensor::zeros([b * t, c, 1]);
    for n in 0..b {
        for e in 0..t {
            for ch in 0..c {
                x.data[(n * t + e) * c + ch] = y.data[(n * c + ch) * t + e];
            }
        }
    }
    x
}

/// A staging network built from a [`ModelConfig`]. Maps `[B, 1, S*T]`
/// (`S` samples per epoch) to logits `[B, 4, T]`.
#[derive(Debug, Clone)]
pub struct SleepStager {
    pub config: ModelConfig,
    mode: Mode,
    encoder: Vec<ResBlock>,
    embed: Dense,
    embed_relu: Relu,
    context: Vec<ContextBlock>,
    pub insert: Option<Insert>,
    head: Head,
    tape: Option<(usize, usize)>,
}

impl SleepStager {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<SleepStager> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (base, insert_cfg) = match config {
            ModelConfig::SleepPpgNet(c) => (c.clone(), None),
            ModelConfig::SleepPpgNet2(c) => {
                if !(0.0..=1.0).contains(&c.dsu_p) || !(0.0..1.0).contains(&c.dropout) {
                    return Err(ModelError::Config("DSU p in [0, 1] and dropout in [0, 1) required".into()));
                }
                (c.base.clone(), Some((c.dsu_p, c.dropout)))
            }
            ModelConfig::Dts(c) => (
                SleepPpgNetConfig {
                    samples_per_epoch: c.samples_per_epoch,
                    encoder_channels: c.encoder_channels.clone(),
                    encoder_kernel: c.encoder_kernel,
                    pool: c.pool,
                    embed_dim: c.hidden,
                    context_kernel: 1,
                    dilations: vec![],
                },
                None,
            ),
        };
        base.validate()?;
        let mut encoder = Vec::new();
        let mut cin = 1;
        for (i, &cout) in base.encoder_channels.iter().enumerate() {
            encoder.push(ResBlock::new(
                &format!("encoder.{i}"),
                cin,
                cout,
                base.encoder_kernel,
                base.pool,
                &mut rng,
            ));
            cin = cout;
        }
        let embed = Dense::new("embed", cin * base.encoded_len(), base.embed_dim, &mut rng);
        let context = base
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| ContextBlock {
                conv: Conv1d::new(
                    &format!("context.{i}"),
                    base.embed_dim,
                    base.embed_dim,
                    base.context_kernel,
                    1,
                    d,
                    &mut rng,
                ),
                relu: Relu::new(),
            })
            .collect();
        let head = match config {
            ModelConfig::Dts(c) => Head::Mlp(
                Conv1d::new("head.0", c.hidden, c.hidden, 1, 1, 1, &mut rng),
                Relu::new(),
                Conv1d::new("head.1", c.hidden, N_CLASSES, 1, 1, 1, &mut rng),
            ),
            _ => Head::Linear(Conv1d::new("head", base.embed_dim, N_CLASSES, 1, 1, 1, &mut rng)),
        };
        let insert = insert_cfg.map(|(p, drop)| Insert {
            dsu: Dsu::new(p),
            bn: BatchNorm::new("insert.bn", base.embed_dim),
            dropout: Dropout::new(drop),
        });
        Ok(SleepStager {
            config: config.clone(),
            mode: Mode::Eval,
            encoder,
            embed,
            embed_relu: Relu::new(),
            context,
            insert,
            head,
            tape: None,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        if mode == Mode::Eval {
            self.clear_tape();
        }
    }

    pub fn samples_per_epoch(&self) -> usize {
        self.config.samples_per_epoch()
    }

    /// Per-epoch encoder and embedding: `[B, 1, S*T]` to `[B, E, T]`.
    pub fn encode(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let s = self.samples_per_epoch();
        if x.channels() != 1 || x.length() % s != 0 || x.length() == 0 {
            return Err(ModelError::Input {
                samples: x.length(),
                per_epoch: s,
            });
        }
        let (b, t) = (x.batch(), x.length() / s);
        let rows = x.clone().reshape([b * t, 1, s])?;
        let emb = if ctx.training() {
            self.encode_rows(&rows, ctx)?
        } else {
            let mut out = Vec::with_capacity(b * t * self.embed.out_features);
            for chunk in rows.data.chunks(EVAL_CHUNK * s) {
                let part = Tensor::from_vec([chunk.len() / s, 1, s], chunk.to_vec())?;
                out.extend(self.encode_rows(&part, ctx)?.data);
            }
            Tensor::from_vec([b * t, self.embed.out_features, 1], out)?
        };
        self.tape = ctx.training().then_some((b, t));
        Ok(rows_to_sequence(&emb, b, t))
    }

    fn encode_rows(&mut self, rows: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let mut h = rows.clone();
        for block in &mut self.encoder {
            h = block.forward(&h, ctx)?;
        }
        let h = self.embed.forward(&h, ctx)?;
        Ok(self.embed_relu.forward(&h, ctx)?)
    }

    /// Dilated temporal context over `[B, E, T]`.
    pub fn contextualize(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &mut self.context {
            h = block.forward(&h, ctx)?;
        }
        Ok(h)
    }

    /// DSU, batch norm and dropout (identity when the model has no insert).
    pub fn apply_insert(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        match &mut self.insert {
            None => Ok(x.clone()),
            Some(ins) => {
                let h = ins.dsu.forward(x, ctx)?;
                let h = ins.bn.forward(&h, ctx)?;
                Ok(ins.dropout.forward(&h, ctx)?)
            }
        }
    }

    pub fn apply_head(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        Ok(match &mut self.head {
            Head::Linear(conv) => conv.forward(x, ctx)?,
            Head::Mlp(a, r, b) => {
                let h = a.forward(x, ctx)?;
                let h = r.forward(&h, ctx)?;
                b.forward(&h, ctx)?
            }
        })
    }

    /// Logits `[B, 4, T]`. Training mode records the tape for
    /// [`SleepStager::backward`].
    pub fn forward(&mut self, x: &Tensor, rng: &mut dyn rand::RngCore) -> Result<Tensor> {
        let mut ctx = Ctx::new(self.mode, rng);
        let h = self.encode(x, &mut ctx)?;
        let h = self.contextualize(&h, &mut ctx)?;
        let h = self.apply_insert(&h, &mut ctx)?;
        self.apply_head(&h, &mut ctx)
    }

    /// Backpropagates the logit gradient, accumulating parameter gradients.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (b, t) = self.tape.ok_or(NeuralError::NoTape("model"))?;
        let mut g = match &mut self.head {
            Head::Linear(conv) => conv.backward(grad)?,
            Head::Mlp(a, r, c) => {
                let h = c.backward(grad)?;
                let h = r.backward(&h)?;
                a.backward(&h)?
            }
        };
        if let Some(ins) = &mut self.insert {
            g = ins.dropout.backward(&g)?;
            g = ins.bn.backward(&g)?;
            g = ins.dsu.backward(&g)?;
        }
        for block in self.context.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        let rows = sequence_to_rows(&g);
        let h = self.embed_relu.backward(&rows)?;
        let mut h = self.embed.backward(&h)?;
        for block in self.encoder.iter_mut().rev() {
            h = block.backward(&h)?;
        }
        let s = self.samples_per_epoch();
        Ok(h.reshape([b, 1, t * s])?)
    }

    fn layers(&mut self) -> Vec<&mut dyn Layer> {
        let mut out: Vec<&mut dyn Layer> = Vec::new();
        for block in &mut self.encoder {
            out.extend(block.layers());
        }
        out.push(&mut self.embed);
        out.push(&mut self.embed_relu);
        for block in &mut self.context {
            out.push(&mut block.conv);
            out.push(&mut block.relu);
        }
        if let Some(ins) = &mut self.insert {
            out.push(&mut ins.dsu);
            out.push(&mut ins.bn);
            out.push(&mut ins.dropout);
        }
        match &mut self.head {
            Head::Linear(conv) => out.push(conv),
            Head::Mlp(a, r, b) => {
                out.push(a);
                out.push(r);
                out.push(b);
            }
        }
        out
    }

    /// Visits every parameter and buffer in a fixed order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for layer in self.layers() {
            layer.visit_params(f);
        }
    }

    pub fn clear_tape(&mut self) {
        for layer in self.layers() {
            layer.clear_tape();
        }
        self.tape = None;
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    /// Number of trainable scalars.
    pub fn n_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }

    pub fn to_checkpoint(&mut self, adam: Option<&crate::neural::Adam>) -> Checkpoint {
        let mut params = Vec::new();
        self.visit_params(&mut |p| {
            params.push(NamedTensor {
                name: p.name.clone(),
                shape: p.shape.clone(),
                values: p.value.clone(),
            })
        });
        Checkpoint {
            config: serde_json::to_string(&self.config).expect("config serializes"),
            params,
            adam: adam.cloned(),
        }
    }

    /// Copies every parameter of `ckpt` into the model, by name.
    pub fn load_params(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let mut by_name: std::collections::HashMap<&str, &NamedTensor> =
            ckpt.params.iter().map(|p| (p.name.as_str(), p)).collect();
        let mut problem = None;
        self.visit_params(&mut |p| match by_name.remove(p.name.as_str()) {
            Some(t) if t.shape == p.shape => p.value.copy_from_slice(&t.values),
            Some(t) => {
                problem.get_or_insert(format!("{}: shape {:?} vs {:?}", p.name, t.shape, p.shape));
            }
            None => {
                problem.get_or_insert(format!("{} missing", p.name));
            }
        });
        if let Some(p) = problem {
            return Err(ModelError::CheckpointMismatch(p));
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(ModelError::CheckpointMismatch(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<SleepStager> {
        let config: ModelConfig =
            serde_json::from_str(&ckpt.config).map_err(|e| ModelError::CheckpointMismatch(e.to_string()))?;
        let mut model = SleepStager::build(&config, 0)?;
        model.load_params(ckpt)?;
        Ok(model)
    }
}

/// Per-epoch predictions of one night.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub hypnogram: Hypnogram,
    pub probabilities: Vec<[f64; N_CLASSES]>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs the model over a whole night. Every epoch gets a prediction; epochs
/// invalid in the input stay flagged invalid.
pub fn predict_stages(model: &mut SleepStager, epochs: &EpochTensor) -> Result<Prediction> {
    if model.mode() != Mode::Eval {
        return Err(ModelError::Mode(model.mode()));
    }
    if epochs.samples_per_epoch != model.samples_per_epoch() {
        return Err(ModelError::Input {
            samples: epochs.samples_per_epoch,
            per_epoch: model.samples_per_epoch(),
        });
    }
    let x = Tensor::from_vec([1, 1, epochs.data.len()], epochs.data.clone())?;
    // eval mode draws nothing from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let logits = model.forward(&x, &mut rng)?;
    Ok(prediction_from_logits(&logits, &epochs.valid))
}

pub fn prediction_from_logits(logits: &Tensor, valid: &[bool]) -> Prediction {
    let rows = softmax_rows(logits);
    let mut stages = Vec::with_capacity(rows.len());
    let mut probabilities = Vec::with_capacity(rows.len());
    for row in rows {
        stages.push(Stage4::from_index(argmax(&row)).expect("four classes"));
        let mut p = [0.0; N_CLASSES];
        p.copy_from_slice(&row[..N_CLASSES]);
        probabilities.push(p);
    }
    Prediction {
        hypnogram: Hypnogram::new(stages, valid.to_vec()),
        probabilities,
    }
}
