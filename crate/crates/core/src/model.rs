//! Model configuration, named parameters, and the end-to-end forward pass.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
// Unused whenever std is in the build graph; needed for no_std builds.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::agl;
use crate::arl::{self, ArlVars};
use crate::autodiff::{Tape, Var};
use crate::encoder::{self, LstmVars};
use crate::error::{bail, Result};
use crate::gnn::{self, Dropout, GnnVars, MlpVars};
use crate::rng::{normal, uniform, StreamRng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub nodes: usize,
    pub t_in: usize,
    pub t_out: usize,
    /// LSTM hidden size per step.
    pub lstm_hidden: usize,
    pub gnn_layers: usize,
    pub gnn_out: usize,
    /// Node-embedding width `d_m`.
    pub embed_dim: usize,
    /// Query/key width `d`.
    pub attn_dim: usize,
    pub value_dim: usize,
    /// Gumbel samples per node during training and kept neighbours at inference.
    pub samples: usize,
    pub temperature: f64,
    pub dropout: f64,
    pub use_agl: bool,
    pub use_predefined: bool,
    pub use_arl: bool,
    pub allow_self_loops: bool,
    /// Whether a pre-defined graph is supplied with the data.
    pub has_predefined: bool,
}

impl ModelConfig {
    /// Defaults from the published training setup, sized for `nodes`.
    pub fn new(nodes: usize, t_in: usize, t_out: usize) -> Self {
        Self {
            nodes,
            t_in,
            t_out,
            lstm_hidden: 16,
            gnn_layers: 2,
            gnn_out: 32,
            embed_dim: 64,
            attn_dim: 128,
            value_dim: 128,
            samples: 15.min(nodes.saturating_sub(1)).max(1),
            temperature: 0.5,
            dropout: 0.3,
            use_agl: true,
            use_predefined: true,
            use_arl: true,
            allow_self_loops: false,
            has_predefined: false,
        }
    }

    pub fn encoder_width(&self) -> usize {
        self.t_in * self.lstm_hidden
    }

    pub fn implicit_channel(&self) -> bool {
        self.use_agl
    }

    pub fn predefined_channel(&self) -> bool {
        self.use_predefined && self.has_predefined
    }

    /// Number of fused relation channels `K`.
    pub fn channels(&self) -> usize {
        1 + usize::from(self.implicit_channel()) + usize::from(self.predefined_channel())
    }

    pub fn attends(&self) -> bool {
        self.use_arl && self.channels() >= 2
    }

    /// Ablation label in the style `full`, `w/o AGL`, `w/o ARL`, `w/o A2`.
    pub fn label(&self) -> String {
        let mut missing = Vec::new();
        if !self.use_agl && !self.use_arl {
            missing.push("A2");
        } else {
            if !self.use_agl {
                missing.push("AGL");
            }
            if !self.use_arl {
                missing.push("ARL");
            }
        }
        if !self.use_predefined && self.has_predefined {
            missing.push("Ap");
        }
        if missing.is_empty() {
            "full".to_string()
        } else {
            format!("w/o {}", missing.join("+"))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nodes", self.nodes),
            ("t_in", self.t_in),
            ("t_out", self.t_out),
            ("lstm_hidden", self.lstm_hidden),
            ("gnn_layers", self.gnn_layers),
            ("gnn_out", self.gnn_out),
            ("embed_dim", self.embed_dim),
            ("attn_dim", self.attn_dim),
            ("value_dim", self.value_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            bail!(Config, "{name} must be positive");
        }
        if !(self.temperature > 0.0) {
            bail!(Config, "temperature must be positive, got {}", self.temperature);
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Config, "dropout must lie in [0, 1), got {}", self.dropout);
        }
        if self.use_agl {
            let cands = if self.allow_self_loops { self.nodes } else { self.nodes.saturating_sub(1) };
            if self.samples == 0 || self.samples > cands {
                bail!(Config, "samples = {} outside 1..={cands} for {} nodes", self.samples, self.nodes);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Edge logits of the graph learner.
    GraphLearner,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Ordered named parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn push(&mut self, name: &str, group: ParamGroup, value: Tensor) {
        debug_assert!(self.index(name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name: name.to_string(), group, value });
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index(name).map(|i| &mut self.params[i].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

pub const GRAPH_LOGITS: &str = "agl.logits";

/// Whether stochastic parts (Gumbel sampling, dropout) are active.
pub enum Mode<'a> {
    Training { gumbel: &'a mut StreamRng, dropout: &'a mut StreamRng },
    Inference,
}

/// Outputs of one forward pass.
pub struct Forward {
    /// `(B·N) × t_out`, rows ordered (window, node), normalised scale.
    pub prediction: Var,
    /// Effective learned adjacency used by the pass.
    pub adjacency: Option<Var>,
    /// Attention coefficients `(B·N) × K`.
    pub attention: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
}

fn fan_in_uniform(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor {
    uniform(rng, rows, cols, 1.0 / (rows as f64).sqrt())
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Fresh parameters. Dense weights are `U(±1/√fan_in)`, edge logits
    /// `N(0, 0.01²)`, node embeddings `N(0, 1/√d_m)`.
    pub fn init(&self, rng: &mut StreamRng) -> ParamStore {
        let c = &self.config;
        let mut store = ParamStore::default();
        let other = ParamGroup::Other;
        let [w_ih, w_hh, bias] = encoder::init_lstm(rng, 1, c.lstm_hidden);
        store.push("encoder.w_ih", other, w_ih);
        store.push("encoder.w_hh", other, w_hh);
        store.push("encoder.bias", other, bias);

        let d_enc = c.encoder_width();
        store.push("own.w1", other, fan_in_uniform(rng, d_enc, c.gnn_out));
        store.push("own.b1", other, Tensor::zeros(1, c.gnn_out));
        store.push("own.w2", other, fan_in_uniform(rng, c.gnn_out, c.gnn_out));
        store.push("own.b2", other, Tensor::zeros(1, c.gnn_out));

        let stack = |store: &mut ParamStore, prefix: &str, rng: &mut StreamRng| {
            for l in 0..c.gnn_layers {
                let fan_in = if l == 0 { d_enc } else { c.gnn_out };
                store.push(&format!("{prefix}.w{}", l + 1), other, fan_in_uniform(rng, fan_in, c.gnn_out));
            }
        };
        if c.implicit_channel() {
            store.push(GRAPH_LOGITS, ParamGroup::GraphLearner, normal(rng, c.nodes, c.nodes, 0.01));
            stack(&mut store, "implicit", rng);
        }
        if c.predefined_channel() {
            stack(&mut store, "predefined", rng);
        }
        if c.attends() {
            store.push("arl.embedding", other, normal(rng, c.nodes, c.embed_dim, 1.0 / (c.embed_dim as f64).sqrt()));
            store.push("arl.w_query", other, fan_in_uniform(rng, c.embed_dim, c.attn_dim));
            store.push("arl.w_key", other, fan_in_uniform(rng, c.gnn_out, c.attn_dim));
        }
        store.push("arl.w_value", other, fan_in_uniform(rng, c.gnn_out, c.value_dim));
        store.push("head.w", other, fan_in_uniform(rng, c.channels() * c.value_dim, c.t_out));
        store
    }

    /// Puts every parameter on the tape, tracked or constant.
    pub fn bind(tape: &mut Tape, params: &ParamStore, track: bool) -> Vec<Var> {
        params
            .iter()
            .map(|p| if track { tape.param(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect()
    }

    /// Full pass for the windows in `x` (`(B·N) × t_in`, rows ordered
    /// (window, node)). `vars` are the bound parameters of `params`, in
    /// store order. `predefined` must already be row-normalised.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        vars: &[Var],
        x: &Tensor,
        predefined: Option<&Tensor>,
        mode: Mode,
    ) -> Result<Forward> {
        let c = &self.config;
        if x.cols() != c.t_in || x.rows() % c.nodes != 0 || x.rows() == 0 {
            bail!(Shape, "input {:?} for {} nodes with t_in = {}", x.shape(), c.nodes, c.t_in);
        }
        if vars.len() != params.len() {
            bail!(Shape, "{} bound variables for {} parameters", vars.len(), params.len());
        }
        let windows = x.rows() / c.nodes;
        let var = |name: &str| -> Result<Var> {
            match params.index(name) {
                Some(i) => Ok(vars[i]),
                None => Err(crate::Error::Config(format!("missing parameter {name}"))),
            }
        };
        let stack = |prefix: &str| -> Result<Vec<Var>> {
            (1..=c.gnn_layers).map(|l| var(&format!("{prefix}.w{l}"))).collect()
        };

        let (mut gumbel, dropout_rng) = match mode {
            Mode::Training { gumbel, dropout } => (Some(gumbel), Some(dropout)),
            Mode::Inference => (None, None),
        };
        let mut dropout = Dropout { rate: c.dropout, rng: dropout_rng };

        let lstm = LstmVars { w_ih: var("encoder.w_ih")?, w_hh: var("encoder.w_hh")?, bias: var("encoder.bias")?, hidden: c.lstm_hidden };
        let s = encoder::encode_sequence(tape, &lstm, x, 1)?;

        let adjacency = if c.implicit_channel() {
            let logits = var(GRAPH_LOGITS)?;
            Some(match gumbel.as_deref_mut() {
                Some(rng) => agl::sample_adjacency(tape, logits, c.samples, c.temperature, c.allow_self_loops, rng)?,
                None => {
                    let a = agl::topc_inference(tape.value(logits), c.samples, c.allow_self_loops)?;
                    tape.constant(a)
                }
            })
        } else {
            None
        };
        let predefined = if c.predefined_channel() {
            let Some(a) = predefined else {
                bail!(Config, "model expects a pre-defined graph");
            };
            if a.shape() != (c.nodes, c.nodes) {
                bail!(Shape, "pre-defined graph {:?} for {} nodes", a.shape(), c.nodes);
            }
            Some(tape.constant(a.clone()))
        } else {
            None
        };

        let implicit = if c.implicit_channel() { stack("implicit")? } else { Vec::new() };
        let predefined_w = if c.predefined_channel() { stack("predefined")? } else { Vec::new() };
        let gnn = GnnVars {
            own: MlpVars { w1: var("own.w1")?, b1: var("own.b1")?, w2: var("own.w2")?, b2: var("own.b2")? },
            implicit: &implicit,
            predefined: &predefined_w,
        };
        let bundle = gnn::build_bundle(tape, s, adjacency, predefined, &gnn, &mut dropout)?;
        let channels = bundle.channels();

        let w_value = var("arl.w_value")?;
        let attention = if c.attends() {
            let arl = ArlVars {
                embedding: var("arl.embedding")?,
                w_query: var("arl.w_query")?,
                w_key: var("arl.w_key")?,
                w_value,
            };
            Some(arl::attention_coeffs(tape, &arl, &channels, windows)?)
        } else {
            None
        };
        let z = arl::fuse(tape, w_value, &channels, attention)?;
        let prediction = tape.matmul(z, var("head.w")?)?;
        Ok(Forward { prediction, adjacency, attention })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn small(nodes: usize) -> ModelConfig {
        ModelConfig {
            lstm_hidden: 3,
            gnn_out: 4,
            embed_dim: 3,
            attn_dim: 4,
            value_dim: 2,
            samples: 2,
            ..ModelConfig::new(nodes, 4, 2)
        }
    }

    fn input(nodes: usize, windows: usize) -> Tensor {
        Tensor::from_fn(nodes * windows, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 * 0.3 - 0.9)
    }

    #[test]
    fn labels() {
        let mut c = small(4);
        assert_eq!(c.label(), "full");
        c.use_agl = false;
        assert_eq!(c.label(), "w/o AGL");
        c.use_arl = false;
        assert_eq!(c.label(), "w/o A2");
        c.use_agl = true;
        assert_eq!(c.label(), "w/o ARL");
        let mut c = small(4);
        c.has_predefined = true;
        c.use_predefined = false;
        assert_eq!(c.label(), "w/o Ap");
    }

    #[test]
    fn zero_parameters_predict_zero() {
        let model = Model::new(small(4)).unwrap();
        let mut params = model.init(&mut stream(0, Stream::Init));
        for p in params.iter_mut() {
            p.value = Tensor::zeros(p.value.rows(), p.value.cols());
        }
        let mut t = Tape::new();
        let vars = Model::bind(&mut t, &params, false);
        let out = model.forward(&mut t, &params, &vars, &input(4, 2), None, Mode::Inference).unwrap();
        assert_eq!(t.value(out.prediction).shape(), (8, 2));
        assert!(t.value(out.prediction).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inference_is_deterministic() {
        let model = Model::new(small(5)).unwrap();
        let params = model.init(&mut stream(1, Stream::Init));
        let run = || {
            let mut t = Tape::new();
            let vars = Model::bind(&mut t, &params, false);
            let out = model.forward(&mut t, &params, &vars, &input(5, 3), None, Mode::Inference).unwrap();
            t.value(out.prediction).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ablations_keep_output_shape() {
        let a = Tensor::from_fn(4, 4, |i, j| if i != j { 1.0 / 3.0 } else { 0.0 });
        for (agl, arl, ap) in [(true, true, true), (false, true, true), (true, false, true), (false, false, false), (true, true, false)] {
            let mut cfg = small(4);
            cfg.has_predefined = true;
            cfg.use_agl = agl;
            cfg.use_arl = arl;
            cfg.use_predefined = ap;
            let model = Model::new(cfg.clone()).unwrap();
            let params = model.init(&mut stream(2, Stream::Init));
            assert_eq!(params.get("head.w").unwrap().rows(), cfg.channels() * cfg.value_dim);
            let mut g = stream(2, Stream::Gumbel);
            let mut d = stream(2, Stream::Dropout);
            let mut t = Tape::new();
            let vars = Model::bind(&mut t, &params, true);
            let out = model
                .forward(&mut t, &params, &vars, &input(4, 2), Some(&a), Mode::Training { gumbel: &mut g, dropout: &mut d })
                .unwrap();
            assert_eq!(t.value(out.prediction).shape(), (8, 2));
            assert_eq!(out.attention.is_some(), cfg.attends());
        }
    }

    #[test]
    fn missing_predefined_graph_is_a_config_error() {
        let mut cfg = small(4);
        cfg.has_predefined = true;
        let model = Model::new(cfg).unwrap();
        let params = model.init(&mut stream(0, Stream::Init));
        let mut t = Tape::new();
        let vars = Model::bind(&mut t, &params, false);
        assert!(model.forward(&mut t, &params, &vars, &input(4, 1), None, Mode::Inference).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = small(4);
        c.samples = 4;
        assert!(Model::new(c.clone()).is_err());
        c.samples = 3;
        c.temperature = 0.0;
        assert!(Model::new(c).is_err());
    }
}
