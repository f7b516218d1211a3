//! Full segmentation model: encoder, message passing, readout and the
//! auxiliary static head, with one shared parameter set.

use crate::encoder::{encode, init_encoder, EncoderConfig, EncoderParams, Frame};
use crate::engine::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{init_agnn, run_graph, AgnnParams, GraphConfig};
use crate::head::{aux_static_predict, init_aux, init_readout, readout, AuxParams, Mask, ReadoutParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Width of the two 3x3 readout convolutions.
    pub readout_hidden: usize,
    pub graph: GraphConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            readout_hidden: 16,
            graph: GraphConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.readout_hidden == 0 {
            return Err(Error::Config("readout_hidden must be positive".into()));
        }
        if self.graph.k_iters == 0 {
            return Err(Error::Config("k_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.encoder.channels
    }
}

/// All learnable tensors. `T` is `Tensor` for values and `Var` once bound to
/// a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub encoder: EncoderParams<T>,
    pub agnn: AgnnParams<T>,
    pub readout: ReadoutParams<T>,
    pub aux: AuxParams<T>,
}

/// Parameter groups, used to restrict optimiser updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Encoder,
    Agnn,
    Readout,
    Aux,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Encoder, Group::Agnn, Group::Readout, Group::Aux];

    pub fn prefix(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::Agnn => "agnn",
            Group::Readout => "readout",
            Group::Aux => "aux",
        }
    }
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(Group, &'static str, &T) -> U) -> ModelParams<U> {
        ModelParams {
            encoder: self.encoder.map(|n, t| f(Group::Encoder, n, t)),
            agnn: self.agnn.map(|n, t| f(Group::Agnn, n, t)),
            readout: self.readout.map(|n, t| f(Group::Readout, n, t)),
            aux: self.aux.map(|n, t| f(Group::Aux, n, t)),
        }
    }

    pub fn try_map<U>(&self, mut f: impl FnMut(Group, &'static str, &T) -> Result<U>) -> Result<ModelParams<U>> {
        Ok(ModelParams {
            encoder: self.encoder.try_map(|n, t| f(Group::Encoder, n, t))?,
            agnn: self.agnn.try_map(|n, t| f(Group::Agnn, n, t))?,
            readout: self.readout.try_map(|n, t| f(Group::Readout, n, t))?,
            aux: self.aux.try_map(|n, t| f(Group::Aux, n, t))?,
        })
    }

    pub fn for_each<'a>(&'a self, mut f: impl FnMut(Group, &'static str, &'a T)) {
        self.encoder.for_each(|n, t| f(Group::Encoder, n, t));
        self.agnn.for_each(|n, t| f(Group::Agnn, n, t));
        self.readout.for_each(|n, t| f(Group::Readout, n, t));
        self.aux.for_each(|n, t| f(Group::Aux, n, t));
    }

    pub fn for_each_mut<'a>(&'a mut self, mut f: impl FnMut(Group, &'static str, &'a mut T)) {
        self.encoder.for_each_mut(|n, t| f(Group::Encoder, n, t));
        self.agnn.for_each_mut(|n, t| f(Group::Agnn, n, t));
        self.readout.for_each_mut(|n, t| f(Group::Readout, n, t));
        self.aux.for_each_mut(|n, t| f(Group::Aux, n, t));
    }
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels();
        Ok(ModelParams {
            encoder: init_encoder(&config.encoder, seed)?,
            agnn: init_agnn(c, seed.wrapping_add(1))?,
            readout: init_readout(c, config.readout_hidden, seed.wrapping_add(2))?,
            aux: init_aux(c, seed.wrapping_add(3))?,
        })
    }

    /// Binds every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<ModelParams<Var>> {
        self.try_map(|_, _, t| tape.leaf(t.clone()))
    }

    /// Binds every tensor as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Result<ModelParams<Var>> {
        self.try_map(|_, _, t| tape.constant(t.clone()))
    }

    /// `(group.field, tensor)` pairs in declaration order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.for_each(|g, n, t| out.push((format!("{}.{n}", g.prefix()), t)));
        out
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, _, t| n += t.len());
        n
    }

    /// Expected shape of every tensor for `config`, in declaration order.
    pub fn expected_shapes(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
        Ok(Self::init(config, 0)?
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect())
    }
}

/// Model configuration plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(Model {
            params: ModelParams::init(&config, seed)?,
            config,
        })
    }

    /// Places frames on the tape and encodes them.
    pub fn encode_frames(&self, tape: &mut Tape, p: &ModelParams<Var>, frames: &[&Frame]) -> Result<Vec<Var>> {
        frames
            .iter()
            .map(|f| {
                let x = tape.constant(f.tensor().clone())?;
                encode(tape, x, &p.encoder, &self.config.encoder)
            })
            .collect()
    }

    /// Runs `K` rounds from `states` and reads out one mask per node, using
    /// `embeddings` as the initial node features.
    pub fn segment_graph(
        &self,
        tape: &mut Tape,
        p: &ModelParams<Var>,
        states: &[Var],
        embeddings: &[Var],
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let finals = run_graph(tape, states, &p.agnn, &self.config.graph)?;
        let masks = finals
            .iter()
            .zip(embeddings)
            .map(|(&h, &v)| readout(tape, h, v, &p.readout))
            .collect::<Result<Vec<_>>>()?;
        Ok((finals, masks))
    }

    /// Encodes the frames, treats them as one fully connected graph and
    /// returns a mask per frame (on the tape).
    pub fn forward_graph(&self, tape: &mut Tape, p: &ModelParams<Var>, frames: &[&Frame]) -> Result<Vec<Var>> {
        let v = self.encode_frames(tape, p, frames)?;
        Ok(self.segment_graph(tape, p, &v, &v)?.1)
    }

    pub fn forward_static(&self, tape: &mut Tape, p: &ModelParams<Var>, frame: &Frame) -> Result<Var> {
        let v = self.encode_frames(tape, p, &[frame])?;
        aux_static_predict(tape, v[0], &p.aux)
    }

    /// Joint inference over one graph of frames, without gradients.
    pub fn predict_graph(&self, frames: &[&Frame]) -> Result<Vec<Mask>> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape)?;
        let masks = self.forward_graph(&mut tape, &p, frames)?;
        masks.iter().map(|&m| mask_from_var(&tape, m)).collect()
    }

    /// Initial node state of one frame.
    pub fn embed(&self, frame: &Frame) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape)?;
        let v = self.encode_frames(&mut tape, &p, &[frame])?;
        Ok(tape.value(v[0]).clone())
    }

    /// Runs one graph whose node `i` starts from `states[i]` and is read out
    /// against `embeddings[i]`. Returns final states and feature-resolution
    /// masks.
    pub fn run_nodes(&self, states: &[&Tensor], embeddings: &[&Tensor]) -> Result<(Vec<Tensor>, Vec<Mask>)> {
        if states.len() != embeddings.len() {
            return Err(Error::shape(
                "run_nodes",
                format!("{} states vs {} embeddings", states.len(), embeddings.len()),
            ));
        }
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape)?;
        let h0 = states.iter().map(|t| tape.constant((*t).clone())).collect::<Result<Vec<_>>>()?;
        let v = embeddings.iter().map(|t| tape.constant((*t).clone())).collect::<Result<Vec<_>>>()?;
        let (finals, masks) = self.segment_graph(&mut tape, &p, &h0, &v)?;
        Ok((
            finals.iter().map(|&h| tape.value(h).clone()).collect(),
            masks.iter().map(|&m| mask_from_var(&tape, m)).collect::<Result<_>>()?,
        ))
    }

    pub fn predict_static(&self, frame: &Frame) -> Result<Mask> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape)?;
        let m = self.forward_static(&mut tape, &p, frame)?;
        mask_from_var(&tape, m)
    }
}

pub(crate) fn mask_from_var(tape: &Tape, v: Var) -> Result<Mask> {
    let t = tape.value(v);
    match *t.shape() {
        [h, w] => Mask::predicted(h, w, t.data().to_vec()),
        ref s => Err(Error::shape("mask", format!("expected [H, W], got {s:?}"))),
    }
}
