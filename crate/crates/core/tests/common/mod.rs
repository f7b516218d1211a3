//! Explicit-loop reference implementations of the graph layer, written on
//! flat `Vec<f64>` grids of `n` positions by `c` channels.

#![allow(dead_code)]

use agnn::engine::Tensor;
use agnn::graph::AgnnParams;

pub fn conv1x1(x: &[f64], n: usize, ci: usize, w: &[f64], b: Option<&[f64]>, co: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * co];
    for p in 0..n {
        for o in 0..co {
            let mut s = b.map_or(0.0, |b| b[o]);
            for i in 0..ci {
                s += x[p * ci + i] * w[i * co + o];
            }
            out[p * co + o] = s;
        }
    }
    out
}

pub fn softmax_rows(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for k in 0..cols {
            out[r * cols + k] = (row[k] - max).exp();
            total += out[r * cols + k];
        }
        for k in 0..cols {
            out[r * cols + k] /= total;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn intra(h: &[f64], n: usize, c: usize, p: &AgnnParams) -> Vec<f64> {
    let q = conv1x1(h, n, c, p.w_f.data(), None, c);
    let k = conv1x1(h, n, c, p.w_h.data(), None, c);
    let v = conv1x1(h, n, c, p.w_l.data(), None, c);
    let mut s = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            for ch in 0..c {
                s[a * n + b] += q[a * c + ch] * k[b * c + ch];
            }
        }
    }
    let att = softmax_rows(&s, n, n);
    let alpha = p.alpha.data()[0];
    let mut out = h.to_vec();
    for a in 0..n {
        for ch in 0..c {
            let mut ctx = 0.0;
            for b in 0..n {
                ctx += att[a * n + b] * v[b * c + ch];
            }
            out[a * c + ch] += alpha * ctx;
        }
    }
    out
}

pub fn inter(hi: &[f64], hj: &[f64], n: usize, c: usize, w: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let mut s = 0.0;
            for x in 0..c {
                for y in 0..c {
                    s += hi[a * c + x] * w[x * c + y] * hj[b * c + y];
                }
            }
            e[a * n + b] = s;
        }
    }
    e
}

pub fn neighbor(hj: &[f64], e: &[f64], n: usize, c: usize) -> Vec<f64> {
    let att = softmax_rows(e, n, n);
    let mut m = vec![0.0; n * c];
    for a in 0..n {
        for b in 0..n {
            for ch in 0..c {
                m[a * c + ch] += att[a * n + b] * hj[b * c + ch];
            }
        }
    }
    m
}

pub fn gate(m: &[f64], n: usize, c: usize, p: &AgnnParams) -> Vec<f64> {
    let z = conv1x1(m, n, c, p.w_g.data(), Some(p.b_g.data()), c);
    (0..c)
        .map(|ch| sigmoid((0..n).map(|a| z[a * c + ch]).sum::<f64>() / n as f64))
        .collect()
}

pub fn aggregate(messages: &[Vec<f64>], gates: Option<&[Vec<f64>]>, n: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for (j, m) in messages.iter().enumerate() {
        for a in 0..n {
            for ch in 0..c {
                let g = gates.map_or(1.0, |g| g[j][ch]);
                out[a * c + ch] += g * m[a * c + ch];
            }
        }
    }
    out
}

fn concat(a: &[f64], b: &[f64], n: usize, c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n * c);
    for p in 0..n {
        out.extend_from_slice(&a[p * c..(p + 1) * c]);
        out.extend_from_slice(&b[p * c..(p + 1) * c]);
    }
    out
}

pub fn gru(h: &[f64], m: &[f64], n: usize, c: usize, p: &AgnnParams) -> Vec<f64> {
    let hm = concat(h, m, n, c);
    let z: Vec<f64> = conv1x1(&hm, n, 2 * c, p.w_z.data(), Some(p.b_z.data()), c)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = conv1x1(&hm, n, 2 * c, p.w_r.data(), Some(p.b_r.data()), c)
        .into_iter()
        .map(sigmoid)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(r, h)| r * h).collect();
    let cand = conv1x1(&concat(&rh, m, n, c), n, 2 * c, p.w_u.data(), Some(p.b_u.data()), c);
    (0..n * c).map(|k| (1.0 - z[k]) * h[k] + z[k] * cand[k].tanh()).collect()
}

pub fn symmetric(w: &[f64], c: usize) -> Vec<f64> {
    let mut s = vec![0.0; c * c];
    for x in 0..c {
        for y in 0..c {
            s[x * c + y] = 0.5 * (w[x * c + y] + w[y * c + x]);
        }
    }
    s
}

/// One synchronous round over all nodes.
pub fn round(states: &[Vec<f64>], n: usize, c: usize, p: &AgnnParams, gated: bool) -> Vec<Vec<f64>> {
    let w = symmetric(p.w_c.data(), c);
    (0..states.len())
        .map(|i| {
            let messages: Vec<Vec<f64>> = (0..states.len())
                .map(|j| {
                    if j == i {
                        intra(&states[i], n, c, p)
                    } else {
                        neighbor(&states[j], &inter(&states[i], &states[j], n, c, &w), n, c)
                    }
                })
                .collect();
            let gates: Vec<Vec<f64>> = messages.iter().map(|m| gate(m, n, c, p)).collect();
            let agg = aggregate(&messages, gated.then_some(gates.as_slice()), n, c);
            gru(&states[i], &agg, n, c, p)
        })
        .collect()
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_tensor(rng: &mut impl rand::Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Graph parameters with every tensor (biases and `alpha` included) drawn
/// at random so no term of the update is switched off.
pub fn random_agnn(rng: &mut impl rand::Rng, c: usize) -> AgnnParams {
    let template = agnn::graph::init_agnn(c, 0).unwrap();
    template.map(|_, t| random_tensor(rng, t.shape(), 1.0))
}

use agnn::engine::{Tape, Var};
use agnn::graph::{
    aggregate_messages, convgru_update, inter_attention, intra_attention, message_gate, neighbor_message,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random grid dimensions with `H * W <= 9` and `C <= 4`.
pub fn small_dims(rng: &mut impl Rng) -> (usize, usize, usize) {
    let h = rng.gen_range(1..=3);
    let w = rng.gen_range(1..=3);
    (h, w, rng.gen_range(1..=4))
}

/// Largest deviation between each tape function and its oracle on one
/// seeded instance, in the order intra, inter, neighbor, gate, aggregate,
/// GRU.
pub fn oracle_deviations(seed: u64) -> [f64; 6] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hh, ww, c) = small_dims(&mut rng);
    let n = hh * ww;
    let params = random_agnn(&mut rng, c);
    let grids: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut rng, &[hh, ww, c], 2.0)).collect();
    let w_c = random_tensor(&mut rng, &[c, c], 1.0);

    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape).unwrap();
    let g: Vec<Var> = grids.iter().map(|t| tape.constant(t.clone()).unwrap()).collect();
    let wv = tape.constant(w_c.clone()).unwrap();
    let d = |t: &Tape, v: Var| t.value(v).data().to_vec();
    let raw: Vec<Vec<f64>> = grids.iter().map(|t| t.data().to_vec()).collect();

    let loop_edge = intra_attention(&mut tape, g[0], &p).unwrap();
    let (e01, _) = inter_attention(&mut tape, g[0], g[1], wv).unwrap();
    let msg = neighbor_message(&mut tape, g[1], e01).unwrap();
    let gv = message_gate(&mut tape, msg, &p).unwrap();
    let gates: Vec<Var> = g.iter().map(|&m| message_gate(&mut tape, m, &p).unwrap()).collect();
    let agg = aggregate_messages(&mut tape, &g, Some(&gates)).unwrap();
    let upd = convgru_update(&mut tape, g[0], g[2], &p).unwrap();

    let e_oracle = inter(&raw[0], &raw[1], n, c, w_c.data());
    let gate_oracle: Vec<Vec<f64>> = raw.iter().map(|m| gate(m, n, c, &params)).collect();
    [
        max_abs(&d(&tape, loop_edge), &intra(&raw[0], n, c, &params)),
        max_abs(&d(&tape, e01), &e_oracle),
        max_abs(&d(&tape, msg), &neighbor(&raw[1], &e_oracle, n, c)),
        max_abs(&d(&tape, gv), &gate(&neighbor(&raw[1], &e_oracle, n, c), n, c, &params)),
        max_abs(&d(&tape, agg), &aggregate(&raw, Some(&gate_oracle), n, c)),
        max_abs(&d(&tape, upd), &gru(&raw[0], &raw[2], n, c, &params)),
    ]
}
