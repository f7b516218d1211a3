//! Attentive message passing over a fully connected graph of frame nodes.
//!
//! Every node holds a `[H, W, C]` state. One round computes, from the
//! previous states only:
//!
//! * a loop edge per node by intra-attention over its own positions,
//! * a pair of line edges per unordered node pair by inter-attention,
//! * a message per ordered pair (the loop edge itself on the self-loop,
//!   a row-softmax weighted read of the sender otherwise),
//! * a channel gate per message,
//!
//! and then updates every node at once with a convolutional GRU on the gated
//! sum of its incoming messages.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{conv_kernel, param_group};

param_group! {
    /// Weights shared by every node and every round.
    AgnnParams {
        /// Query projection of intra-attention, `[1, 1, C, C]`.
        w_f,
        /// Key projection of intra-attention, `[1, 1, C, C]`.
        w_h,
        /// Value projection of intra-attention, `[1, 1, C, C]`.
        w_l,
        /// Residual scale of intra-attention, `[1]`.
        alpha,
        /// Bilinear inter-attention weight, `[C, C]`.
        w_c,
        w_g, b_g,
        /// GRU update gate on `[h, m]`, `[1, 1, 2C, C]`.
        w_z, b_z,
        /// GRU reset gate on `[h, m]`.
        w_r, b_r,
        /// GRU candidate on `[r * h, m]`.
        w_u, b_u,
    }
}

pub fn init_agnn(channels: usize, seed: u64) -> Result<AgnnParams> {
    if channels == 0 {
        return Err(Error::Config("channels must be positive".into()));
    }
    let c = channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_f = conv_kernel(&mut rng, 1, c, c);
    let w_h = conv_kernel(&mut rng, 1, c, c);
    let w_l = conv_kernel(&mut rng, 1, c, c);
    let w_c = Tensor::from_fn(&[c, c], |i| {
        let noise = rng.gen_range(-0.01..0.01);
        if i / c == i % c {
            1.0 + noise
        } else {
            noise
        }
    });
    Ok(AgnnParams {
        w_f,
        w_h,
        w_l,
        alpha: Tensor::scalar(0.0),
        w_c,
        w_g: conv_kernel(&mut rng, 1, c, c),
        b_g: Tensor::zeros(&[c]),
        w_z: conv_kernel(&mut rng, 1, 2 * c, c),
        b_z: Tensor::zeros(&[c]),
        w_r: conv_kernel(&mut rng, 1, 2 * c, c),
        b_r: Tensor::zeros(&[c]),
        w_u: conv_kernel(&mut rng, 1, 2 * c, c),
        b_u: Tensor::zeros(&[c]),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphConfig {
    /// Message-passing rounds `K`.
    pub k_iters: usize,
    /// Scale messages by their learned channel gates. Without gates every
    /// message enters the sum with weight one.
    pub gated: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k_iters: 3,
            gated: true,
        }
    }
}

fn grid_dims(tape: &Tape, v: Var, op: &'static str) -> Result<[usize; 3]> {
    match *tape.shape(v) {
        [h, w, c] => Ok([h, w, c]),
        ref s => Err(Error::shape(op, format!("expected [H, W, C] node state, got {s:?}"))),
    }
}

/// Loop edge `alpha * softmax(Q K^T) V + h` with 1x1-convolution projections.
pub fn intra_attention(tape: &mut Tape, h: Var, p: &AgnnParams<Var>) -> Result<Var> {
    let [hh, ww, c] = grid_dims(tape, h, "intra_attention")?;
    let n = hh * ww;
    let q = tape.conv2d(h, p.w_f, None, 1)?;
    let q = tape.reshape(q, &[n, c])?;
    let k = tape.conv2d(h, p.w_h, None, 1)?;
    let k = tape.reshape(k, &[n, c])?;
    let kt = tape.transpose(k)?;
    let sim = tape.matmul(q, kt)?;
    let attn = tape.row_softmax(sim)?;
    let v = tape.conv2d(h, p.w_l, None, 1)?;
    let v = tape.reshape(v, &[n, c])?;
    let ctx = tape.matmul(attn, v)?;
    let ctx = tape.reshape(ctx, &[hh, ww, c])?;
    let scaled = tape.scalar_mul(p.alpha, ctx)?;
    tape.add(scaled, h)
}

/// Line edges `(e_ij, e_ji)` with `e_ij = h_i W_c h_j^T` over flattened
/// `(HW) x C` states. `e_ji` is produced as the transpose of `e_ij`.
pub fn inter_attention(tape: &mut Tape, h_i: Var, h_j: Var, w_c: Var) -> Result<(Var, Var)> {
    let [hh, ww, c] = grid_dims(tape, h_i, "inter_attention")?;
    let dj = grid_dims(tape, h_j, "inter_attention")?;
    if dj != [hh, ww, c] {
        return Err(Error::shape("inter_attention", format!("{:?} vs {dj:?}", [hh, ww, c])));
    }
    if tape.shape(w_c) != [c, c] {
        return Err(Error::shape("inter_attention", format!("W_c {:?} for {c} channels", tape.shape(w_c))));
    }
    let n = hh * ww;
    let fi = tape.reshape(h_i, &[n, c])?;
    let fj = tape.reshape(h_j, &[n, c])?;
    let left = tape.matmul(fi, w_c)?;
    let fjt = tape.transpose(fj)?;
    let e_ij = tape.matmul(left, fjt)?;
    let e_ji = tape.transpose(e_ij)?;
    Ok((e_ij, e_ji))
}

/// The self-loop message is the loop edge itself.
pub fn loop_message(e_ii: Var) -> Var {
    e_ii
}

/// Message `softmax(e_ij) h_j` from node `j` to node `i`, reshaped to a grid.
pub fn neighbor_message(tape: &mut Tape, h_j: Var, e_ij: Var) -> Result<Var> {
    let [hh, ww, c] = grid_dims(tape, h_j, "neighbor_message")?;
    let n = hh * ww;
    if tape.shape(e_ij) != [n, n] {
        return Err(Error::shape(
            "neighbor_message",
            format!("edge {:?} for {n} positions", tape.shape(e_ij)),
        ));
    }
    let weights = tape.row_softmax(e_ij)?;
    let fj = tape.reshape(h_j, &[n, c])?;
    let m = tape.matmul(weights, fj)?;
    tape.reshape(m, &[hh, ww, c])
}

/// Channel confidence `sigmoid(GAP(W_g * m + b_g))`.
pub fn message_gate(tape: &mut Tape, m: Var, p: &AgnnParams<Var>) -> Result<Var> {
    grid_dims(tape, m, "message_gate")?;
    let z = tape.conv2d(m, p.w_g, Some(p.b_g), 1)?;
    let pooled = tape.global_avg_pool(z)?;
    tape.sigmoid(pooled)
}

/// Gated sum `sum_j g_j * m_j`, accumulated in list order. With `gates`
/// absent the messages are summed directly.
pub fn aggregate_messages(tape: &mut Tape, messages: &[Var], gates: Option<&[Var]>) -> Result<Var> {
    if messages.is_empty() {
        return Err(Error::shape("aggregate_messages", "no messages"));
    }
    if let Some(g) = gates {
        if g.len() != messages.len() {
            return Err(Error::shape(
                "aggregate_messages",
                format!("{} messages but {} gates", messages.len(), g.len()),
            ));
        }
    }
    let mut acc: Option<Var> = None;
    for (idx, &m) in messages.iter().enumerate() {
        let term = match gates {
            Some(g) => tape.channel_mul(m, g[idx])?,
            None => m,
        };
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("nonempty"))
}

/// Convolutional GRU step with 1x1 kernels:
///
/// ```text
/// z  = sigmoid(W_z * [h, m] + b_z)
/// r  = sigmoid(W_r * [h, m] + b_r)
/// h~ = tanh(W_u * [r . h, m] + b_u)
/// h' = (1 - z) . h + z . h~
/// ```
pub fn convgru_update(tape: &mut Tape, h_prev: Var, m: Var, p: &AgnnParams<Var>) -> Result<Var> {
    let dh = grid_dims(tape, h_prev, "convgru_update")?;
    let dm = grid_dims(tape, m, "convgru_update")?;
    if dh != dm {
        return Err(Error::shape("convgru_update", format!("state {dh:?} vs message {dm:?}")));
    }
    let hm = tape.concat_channels(&[h_prev, m])?;
    let z = tape.conv2d(hm, p.w_z, Some(p.b_z), 1)?;
    let z = tape.sigmoid(z)?;
    let r = tape.conv2d(hm, p.w_r, Some(p.b_r), 1)?;
    let r = tape.sigmoid(r)?;
    let rh = tape.mul(r, h_prev)?;
    let rhm = tape.concat_channels(&[rh, m])?;
    let cand = tape.conv2d(rhm, p.w_u, Some(p.b_u), 1)?;
    let cand = tape.tanh(cand)?;
    let one_minus_z = {
        let neg = tape.scale(z, -1.0)?;
        let ones = tape.constant(Tensor::full(&dh, 1.0))?;
        tape.add(ones, neg)?
    };
    let keep = tape.mul(one_minus_z, h_prev)?;
    let write = tape.mul(z, cand)?;
    tape.add(keep, write)
}

/// Everything computed in one round, for inspection.
#[derive(Clone, Debug)]
pub struct RoundTrace {
    /// Updated states, in node order.
    pub states: Vec<Var>,
    /// Loop edges `e_ii`, in node order.
    pub loop_edges: Vec<Var>,
    /// Line edges `((i, j), e_ij)` for every ordered pair `i != j`.
    pub line_edges: Vec<((usize, usize), Var)>,
    /// Messages `((j, i), m_ji)` for every ordered pair including `j == i`.
    pub messages: Vec<((usize, usize), Var)>,
    /// Gates `((j, i), g_ji)`; empty when ungated.
    pub gates: Vec<((usize, usize), Var)>,
}

fn check_states(tape: &Tape, states: &[Var]) -> Result<[usize; 3]> {
    let first = *states
        .first()
        .ok_or_else(|| Error::shape("propagate_round", "graph has no nodes"))?;
    let dims = grid_dims(tape, first, "propagate_round")?;
    for &s in &states[1..] {
        let d = grid_dims(tape, s, "propagate_round")?;
        if d != dims {
            return Err(Error::shape("propagate_round", format!("node states {dims:?} vs {d:?}")));
        }
    }
    Ok(dims)
}

/// `(W + W^T) / 2`. Rounds use the symmetric part of `W_c` so that
/// `e_ij = h_i W h_j^T` and `e_ji = e_ij^T` describe the same function of
/// the two states whichever node carries the lower index.
pub fn symmetric_part(tape: &mut Tape, w: Var) -> Result<Var> {
    let wt = tape.transpose(w)?;
    let sum = tape.add(w, wt)?;
    tape.scale(sum, 0.5)
}

/// One round visiting receiving nodes in `order`. Every quantity reads the
/// previous states only, so the result does not depend on `order`.
pub fn propagate_round_traced(
    tape: &mut Tape,
    states: &[Var],
    p: &AgnnParams<Var>,
    config: &GraphConfig,
    order: &[usize],
) -> Result<RoundTrace> {
    check_states(tape, states)?;
    let n = states.len();
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..n).collect::<Vec<_>>() {
        return Err(Error::Config(format!("order {order:?} is not a permutation of 0..{n}")));
    }

    let mut trace = RoundTrace {
        states: Vec::with_capacity(n),
        loop_edges: Vec::with_capacity(n),
        line_edges: Vec::new(),
        messages: Vec::new(),
        gates: Vec::new(),
    };

    let w_sym = symmetric_part(tape, p.w_c)?;
    let mut loops = vec![None; n];
    let mut edges: Vec<Vec<Option<Var>>> = vec![vec![None; n]; n];
    for &i in order {
        loops[i] = Some(intra_attention(tape, states[i], p)?);
        for j in 0..n {
            if j == i || edges[i][j].is_some() {
                continue;
            }
            let (a, b) = (i.min(j), i.max(j));
            let (e_ab, e_ba) = inter_attention(tape, states[a], states[b], w_sym)?;
            edges[a][b] = Some(e_ab);
            edges[b][a] = Some(e_ba);
        }
    }

    let mut updated = vec![None; n];
    for &i in order {
        let mut incoming = Vec::with_capacity(n);
        let mut gates = Vec::with_capacity(n);
        for j in 0..n {
            let m = if j == i {
                loop_message(loops[i].expect("loop edge"))
            } else {
                neighbor_message(tape, states[j], edges[i][j].expect("line edge"))?
            };
            incoming.push(m);
            trace.messages.push(((j, i), m));
            if config.gated {
                let g = message_gate(tape, m, p)?;
                gates.push(g);
                trace.gates.push(((j, i), g));
            }
        }
        let gate_slice = config.gated.then_some(gates.as_slice());
        let agg = aggregate_messages(tape, &incoming, gate_slice)?;
        updated[i] = Some(convgru_update(tape, states[i], agg, p)?);
    }

    trace.states = updated.into_iter().map(|s| s.expect("updated")).collect();
    trace.loop_edges = loops.into_iter().map(|s| s.expect("loop edge")).collect();
    for (i, row) in edges.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            if let Some(e) = e {
                trace.line_edges.push(((i, j), *e));
            }
        }
    }
    Ok(trace)
}

/// One synchronous round: all messages from round `k - 1` states, then every
/// node updates.
pub fn propagate_round(tape: &mut Tape, states: &[Var], p: &AgnnParams<Var>, config: &GraphConfig) -> Result<Vec<Var>> {
    let order: Vec<usize> = (0..states.len()).collect();
    Ok(propagate_round_traced(tape, states, p, config, &order)?.states)
}

/// `K` sequential rounds.
pub fn run_graph(tape: &mut Tape, states: &[Var], p: &AgnnParams<Var>, config: &GraphConfig) -> Result<Vec<Var>> {
    if config.k_iters == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut current = states.to_vec();
    for _ in 0..config.k_iters {
        current = propagate_round(tape, &current, p, config)?;
    }
    Ok(current)
}

/// A graph of concrete node states, for use without a caller-managed tape.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoGraph {
    pub nodes: Vec<Tensor>,
}

impl VideoGraph {
    pub fn new(nodes: Vec<Tensor>) -> Self {
        VideoGraph { nodes }
    }

    pub fn propagate_round(&self, params: &AgnnParams, config: &GraphConfig) -> Result<VideoGraph> {
        self.run(params, &GraphConfig { k_iters: 1, ..*config })
    }

    pub fn run(&self, params: &AgnnParams, config: &GraphConfig) -> Result<VideoGraph> {
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape)?;
        let states = self
            .nodes
            .iter()
            .map(|n| tape.constant(n.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = run_graph(&mut tape, &states, &bound, config)?;
        Ok(VideoGraph {
            nodes: out.iter().map(|v| tape.value(*v).clone()).collect(),
        })
    }
}
