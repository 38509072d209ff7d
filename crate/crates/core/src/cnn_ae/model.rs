use crate::channel::{derive_seed, stream_rng, transmit, Codeword, NoiseSpec};
use crate::error::{Error, Result};
use crate::nngraph::{
    Activation, BatchNormLayer, BatchStats, Conv1dLayer, Graph, Mode, NodeId, ParamStore, Scalar,
    Tensor,
};

use super::config::AeConfig;

const TAG_INIT: u64 = 0x1;

/// Conv1D followed by batch normalization and an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub name: String,
    pub conv: Conv1dLayer,
    pub bn: BatchNormLayer<T>,
    pub act: Activation,
}

impl<T: Scalar> Block<T> {
    fn forward(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        store: &ParamStore<T>,
        mode: Mode,
    ) -> Result<(NodeId, Option<BatchStats<T>>)> {
        let y = g.conv1d(x, &self.conv, store)?;
        let (y, stats) = g.batch_norm(y, &self.bn, store, mode)?;
        Ok((g.activation(y, self.act), stats))
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }
}

/// The four trainable stages of the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Encoder,
    Modulator,
    Demodulator,
    Decoder,
}

/// One row of the layer output-size table: label and `(positions, channels)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeRow {
    pub label: String,
    pub positions: usize,
    pub channels: usize,
}

impl ShapeRow {
    fn new(label: &str, shape: [usize; 3]) -> Self {
        Self {
            label: label.into(),
            positions: shape[1],
            channels: shape[2],
        }
    }
}

/// CNN autoencoder: encoder (3 conv blocks over `L` positions), modulator
/// (2 blocks over `n`), per-frame power normalization, AWGN, demodulator
/// (2 blocks) and decoder (3 blocks ending in a sigmoid).
#[derive(Debug, Clone, PartialEq)]
pub struct AeModel<T> {
    cfg: AeConfig,
    store: ParamStore<T>,
    blocks: Vec<(Stage, Block<T>)>,
}

/// Result of a forward pass through the recorded graph.
pub struct Forward<T> {
    pub graph: Graph<T>,
    pub input: NodeId,
    /// Normalized transmitter output `(batch, n, 2)`.
    pub codeword: NodeId,
    /// Sigmoid outputs `(batch, K, 1)`.
    pub output: NodeId,
    pub shapes: Vec<ShapeRow>,
    stats: Vec<Option<BatchStats<T>>>,
}

pub fn build_model<T: Scalar>(cfg: &AeConfig) -> Result<AeModel<T>> {
    cfg.validate()?;
    let mut rng = stream_rng(derive_seed(cfg.seed, TAG_INIT), 0);
    let mut store = ParamStore::new();
    let (m1, m2, kw) = (cfg.m1, cfg.m2, cfg.kernel);
    use Activation::{Elu, Linear, Sigmoid};
    use Stage::*;
    let plan: [(Stage, &str, usize, usize, Activation); 10] = [
        (Encoder, "enc1", cfg.k_sub, m1, Elu),
        (Encoder, "enc2", m1, m1, Elu),
        (Encoder, "enc3", m1, cfg.n_sub, Elu),
        (Modulator, "mod1", cfg.k_mod, m2, Elu),
        (Modulator, "mod2", m2, 2, Linear),
        (Demodulator, "demod1", 2, m2, Elu),
        (Demodulator, "demod2", m2, cfg.k_mod, Linear),
        (Decoder, "dec1", cfg.n_sub, m1, Elu),
        (Decoder, "dec2", m1, m1, Elu),
        (Decoder, "dec3", m1, cfg.k_sub, Sigmoid),
    ];
    let mut blocks = Vec::with_capacity(plan.len());
    for (stage, name, cin, cout, act) in plan {
        let conv = Conv1dLayer::new(&mut store, name, cin, cout, kw, &mut rng)?;
        let bn = BatchNormLayer::new(&mut store, &format!("{name}.bn"), cout);
        blocks.push((
            stage,
            Block {
                name: name.to_string(),
                conv,
                bn,
                act,
            },
        ));
    }
    Ok(AeModel {
        cfg: cfg.clone(),
        store,
        blocks,
    })
}

/// Packs frames of `K` bits into the `(batch, L, K')` encoder input.
pub fn bits_to_tensor<T: Scalar>(cfg: &AeConfig, msgs: &[Vec<u8>]) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(msgs.len() * cfg.k);
    for m in msgs {
        if m.len() != cfg.k {
            return Err(Error::shape(format!(
                "expected {} message bits, got {}",
                cfg.k,
                m.len()
            )));
        }
        data.extend(
            m.iter()
                .map(|&b| if b & 1 == 1 { T::one() } else { T::zero() }),
        );
    }
    Tensor::from_vec([msgs.len(), cfg.l, cfg.k_sub], data)
}

impl<T: Scalar> AeModel<T> {
    pub fn config(&self) -> &AeConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn blocks(&self) -> impl Iterator<Item = (Stage, &Block<T>)> {
        self.blocks.iter().map(|(s, b)| (*s, b))
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Block<T>> {
        self.blocks.iter_mut().map(|(_, b)| b)
    }

    /// Trainable scalars: conv weights and biases plus BN scale and shift.
    pub fn trainable_params(&self) -> usize {
        self.store.scalar_count()
    }

    /// Runs the whole pipeline. `noise` is the `(batch, n, 2)` channel
    /// realization added after normalization; `None` is a noiseless channel.
    pub fn forward(
        &self,
        msgs: Tensor<T>,
        noise: Option<&Tensor<T>>,
        mode: Mode,
    ) -> Result<Forward<T>> {
        let cfg = &self.cfg;
        let batch = msgs.batch();
        if msgs.shape() != [batch, cfg.l, cfg.k_sub] {
            return Err(Error::shape(format!(
                "encoder input {:?}, expected [_, {}, {}]",
                msgs.shape(),
                cfg.l,
                cfg.k_sub
            )));
        }
        let mut g = Graph::new();
        let mut shapes = Vec::with_capacity(15);
        let mut stats = Vec::with_capacity(self.blocks.len());
        let input = g.input(msgs);
        shapes.push(ShapeRow {
            label: "input".into(),
            positions: cfg.l * cfg.k_sub,
            channels: 1,
        });

        let mut x = input;
        let mut blocks = self.blocks.iter();
        let mut run = |g: &mut Graph<T>,
                       x: NodeId,
                       count: usize,
                       shapes: &mut Vec<ShapeRow>|
         -> Result<NodeId> {
            let mut x = x;
            for (_, block) in blocks.by_ref().take(count) {
                let (y, s) = block.forward(g, x, &self.store, mode)?;
                stats.push(s);
                shapes.push(ShapeRow::new(&block.name, g.shape(y)));
                x = y;
            }
            Ok(x)
        };

        x = run(&mut g, x, 3, &mut shapes)?;
        x = g.reshape(x, [batch, cfg.n, cfg.k_mod])?;
        shapes.push(ShapeRow::new("reshape", g.shape(x)));
        x = run(&mut g, x, 2, &mut shapes)?;
        let codeword = g.power_normalize(x)?;
        shapes.push(ShapeRow::new("normalize", g.shape(codeword)));
        x = match noise {
            Some(w) => g.add_const(codeword, w)?,
            None => codeword,
        };
        shapes.push(ShapeRow::new("channel", g.shape(x)));
        x = run(&mut g, x, 2, &mut shapes)?;
        x = g.reshape(x, [batch, cfg.l, cfg.n_sub])?;
        shapes.push(ShapeRow::new("reshape", g.shape(x)));
        x = run(&mut g, x, 3, &mut shapes)?;
        let output = g.reshape(x, [batch, cfg.k, 1])?;
        if let Some(last) = shapes.last_mut() {
            last.positions = cfg.k;
            last.channels = 1;
        }
        Ok(Forward {
            graph: g,
            input,
            codeword,
            output,
            shapes,
            stats,
        })
    }

    /// Folds the batch statistics of a training forward pass into the BN running averages.
    pub fn apply_batch_stats(&mut self, fwd: &Forward<T>) {
        for ((_, block), s) in self.blocks.iter_mut().zip(&fwd.stats) {
            if let Some(s) = s {
                block.bn.update_running(s);
            }
        }
    }

    /// Output size of every layer in pipeline order for this configuration.
    pub fn shape_chain(&self) -> Result<Vec<ShapeRow>> {
        let msgs = Tensor::zeros([2, self.cfg.l, self.cfg.k_sub]).map(|_| T::one());
        Ok(self.forward(msgs, None, Mode::Eval)?.shapes)
    }

    /// Transmitter only: encoder, modulator and power normalization.
    pub fn encode_forward(&self, msgs: &[Vec<u8>], mode: Mode) -> Result<Vec<Codeword>> {
        let x = bits_to_tensor(&self.cfg, msgs)?;
        // The receiver half is cheap relative to a second code path; run the
        // full graph noiselessly and read the normalized node.
        let fwd = self.forward(x, None, mode)?;
        let cw = fwd.graph.value(fwd.codeword);
        Ok(cw
            .data()
            .chunks_exact(2 * self.cfg.n)
            .map(|frame| {
                Codeword::from_normalized(
                    frame
                        .chunks_exact(2)
                        .map(|s| [s[0].to_f64().unwrap(), s[1].to_f64().unwrap()])
                        .collect(),
                )
            })
            .collect())
    }

    /// Receiver only, eval mode: soft outputs in `(0, 1)` for received symbols `(batch, n, 2)`.
    pub fn decode_probs(&self, received: &Tensor<T>) -> Result<Tensor<T>> {
        let cfg = &self.cfg;
        let batch = received.batch();
        if received.shape() != [batch, cfg.n, 2] {
            return Err(Error::shape(format!(
                "received {:?}, expected [_, {}, 2]",
                received.shape(),
                cfg.n
            )));
        }
        let mut g = Graph::new();
        let mut x = g.input(received.clone());
        for (_, block) in self.blocks.iter().skip(5) {
            if block.name == "dec1" {
                x = g.reshape(x, [batch, cfg.l, cfg.n_sub])?;
            }
            x = block.forward(&mut g, x, &self.store, Mode::Eval)?.0;
        }
        let out = g.reshape(x, [batch, cfg.k, 1])?;
        Ok(g.value(out).clone())
    }

    /// Eval-mode end-to-end transmission of a batch of messages, one noise
    /// stream per frame; decisions threshold the sigmoid output at 0.5.
    pub fn infer_batch(&self, msgs: &[Vec<u8>], noise: &[NoiseSpec]) -> Result<Vec<Vec<u8>>> {
        if msgs.len() != noise.len() {
            return Err(Error::shape("one noise stream per frame required"));
        }
        let codewords = self.encode_forward(msgs, Mode::Eval)?;
        let n = self.cfg.n;
        let mut rx = Vec::with_capacity(msgs.len() * 2 * n);
        for (cw, spec) in codewords.iter().zip(noise) {
            for s in transmit(cw, spec) {
                rx.push(T::of(s[0]));
                rx.push(T::of(s[1]));
            }
        }
        let probs = self.decode_probs(&Tensor::from_vec([msgs.len(), n, 2], rx)?)?;
        Ok(probs
            .data()
            .chunks_exact(self.cfg.k)
            .map(threshold)
            .collect())
    }

    pub fn infer(&self, msg: &[u8], noise: &NoiseSpec) -> Result<Vec<u8>> {
        Ok(self
            .infer_batch(&[msg.to_vec()], std::slice::from_ref(noise))?
            .remove(0))
    }

    pub fn cast<U: Scalar>(&self) -> AeModel<U> {
        AeModel {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|(s, b)| {
                    (
                        *s,
                        Block {
                            name: b.name.clone(),
                            conv: b.conv,
                            bn: b.bn.cast(),
                            act: b.act,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Bit decisions: 1 iff the soft output is at least 0.5.
pub fn threshold<T: Scalar>(probs: &[T]) -> Vec<u8> {
    let half = T::of(0.5);
    probs.iter().map(|&p| u8::from(p >= half)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn_ae::config::{derive_config, CodeRate};

    fn small_cfg() -> AeConfig {
        derive_config(8, 1.0, CodeRate::new(1, 2).unwrap(), 2, 6, 4, 3)
            .unwrap()
            .with_seed(3)
    }

    #[test]
    fn paper_config_parameter_count() {
        let cfg = derive_config(128, 2.0, CodeRate::new(1, 2).unwrap(), 4, 100, 20, 5).unwrap();
        let model = build_model::<f32>(&cfg).unwrap();
        assert_eq!(model.trainable_params(), 105_547);
        let rel = (model.trainable_params() as f64 - 103_861.0).abs() / 103_861.0;
        assert!(rel < 0.05);
        let by_blocks: usize = model.blocks().map(|(_, b)| b.param_count()).sum();
        assert_eq!(by_blocks, model.trainable_params());
    }

    #[test]
    fn shape_chain_small() {
        let cfg = small_cfg();
        let model = build_model::<f64>(&cfg).unwrap();
        let got: Vec<(usize, usize)> = model
            .shape_chain()
            .unwrap()
            .iter()
            .map(|r| (r.positions, r.channels))
            .collect();
        // L = 8, K' = 1, N' = 2, n = 8, k_mod = 2, M1 = 6, M2 = 4
        let want = vec![
            (8, 1),
            (8, 6),
            (8, 6),
            (8, 2),
            (8, 2),
            (8, 4),
            (8, 2),
            (8, 2),
            (8, 2),
            (8, 4),
            (8, 2),
            (8, 2),
            (8, 6),
            (8, 6),
            (8, 1),
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn outputs_are_probabilities_and_codewords_unit_power() {
        let cfg = small_cfg();
        let model = build_model::<f64>(&cfg).unwrap();
        let msgs: Vec<Vec<u8>> = (1..6u8)
            .map(|i| (0..8).map(|j| (i >> (j % 3)) & 1).collect())
            .collect();
        let fwd = model
            .forward(bits_to_tensor(&cfg, &msgs).unwrap(), None, Mode::Train)
            .unwrap();
        let out = fwd.graph.value(fwd.output);
        assert_eq!(out.shape(), [5, 8, 1]);
        assert!(out.data().iter().all(|&p| p > 0.0 && p < 1.0));
        for cw in model.encode_forward(&msgs, Mode::Eval).unwrap() {
            assert!((crate::channel::average_power(cw.symbols()) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_encoding_is_deterministic() {
        let model = build_model::<f32>(&small_cfg()).unwrap();
        let msgs = vec![vec![1, 0, 1, 1, 0, 0, 1, 0]];
        assert_eq!(
            model.encode_forward(&msgs, Mode::Eval).unwrap(),
            model.encode_forward(&msgs, Mode::Eval).unwrap()
        );
    }

    #[test]
    fn batched_and_single_frame_inference_agree() {
        let model = build_model::<f32>(&small_cfg()).unwrap();
        let msgs: Vec<Vec<u8>> = (0..4u8)
            .map(|i| (0..8).map(|j| (i + j) & 1).collect())
            .collect();
        let noise: Vec<NoiseSpec> = (0..4).map(|i| NoiseSpec::new(0.5, 9, i).unwrap()).collect();
        let batched = model.infer_batch(&msgs, &noise).unwrap();
        for i in 0..4 {
            let single = model.infer(&msgs[i], &noise[i]).unwrap();
            assert_eq!(single, batched[i]);
            assert!(single.iter().all(|&b| b <= 1));
        }
    }

    #[test]
    fn rejects_wrong_message_length() {
        let model = build_model::<f32>(&small_cfg()).unwrap();
        assert!(model.encode_forward(&[vec![0; 7]], Mode::Eval).is_err());
        let noise = NoiseSpec::new(1.0, 0, 0).unwrap();
        assert!(model.infer(&[0; 9], &noise).is_err());
    }

    #[test]
    fn threshold_is_binary() {
        assert_eq!(
            threshold(&[0.0f32, 0.49, 0.5, 0.51, 1.0]),
            vec![0, 0, 1, 1, 1]
        );
    }
}
