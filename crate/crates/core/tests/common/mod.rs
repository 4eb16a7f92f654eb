#![allow(dead_code)]

use fedunet::autodiff::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;
pub const CASES_PER_OP: usize = 20;

pub type Forward = dyn Fn(&mut Tape<f64>, &[Var]) -> fedunet::Result<Var>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values at least 0.1 away from zero, so ReLU kinks stay out of reach of
/// the finite-difference step.
pub fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = uniform(rng, shape, 0.1, 1.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Distinct values spaced 0.01 apart in random order, so every pooling
/// window has a unique maximum with a wide margin.
pub fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

fn evaluate(
    inputs: &[Tensor<f64>],
    weights: Option<&Tensor<f64>>,
    f: &Forward,
    track: bool,
) -> (Tape<f64>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(track)))
        .collect();
    let out = f(&mut tape, &vars).unwrap_or_else(|e| {
        panic!(
            "forward on {:?}: {e}",
            inputs.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>()
        )
    });
    let loss = match weights {
        Some(w) => {
            let w = tape.leaf(w.clone());
            let p = tape.mul(out, w).expect("weighting");
            tape.sum(p).expect("sum")
        }
        None => out,
    };
    (tape, vars, loss)
}

/// Largest `|analytic - numeric| / (REL_TOL * max(|analytic|, |numeric|) + 1e-8)`
/// over every input coordinate; `<= 1` passes. Non-scalar outputs are
/// reduced with fixed random weights so every output coordinate is probed.
pub fn gradcheck(inputs: &[Tensor<f64>], f: &Forward, seed: u64) -> f64 {
    let (probe, _, out) = evaluate(inputs, None, f, false);
    let weights = if probe.value(out).numel() == 1 {
        None
    } else {
        Some(uniform(&mut rng(seed ^ 0x5eed), probe.shape(out), -1.0, 1.0))
    };
    let (mut tape, vars, loss) = evaluate(inputs, weights.as_ref(), f, true);
    tape.backward(loss).expect("backward");

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        #[allow(clippy::needless_range_loop)]
        for j in 0..input.numel() {
            let mut shifted = inputs.to_vec();
            shifted[i].data_mut()[j] = input.data()[j] + STEP;
            let (tp, _, lp) = evaluate(&shifted, weights.as_ref(), f, false);
            let plus = tp.data(lp)[0];
            shifted[i].data_mut()[j] = input.data()[j] - STEP;
            let (tm, _, lm) = evaluate(&shifted, weights.as_ref(), f, false);
            let minus = tm.data(lm)[0];
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic[j];
            let ratio = (a - numeric).abs() / (REL_TOL * a.abs().max(numeric.abs()) + 1e-8);
            worst = worst.max(ratio);
        }
    }
    worst
}

type CaseGen = Box<dyn Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Forward>)>;

/// Every differentiable tape op with a generator of random shapes.
pub fn op_suite() -> Vec<(&'static str, CaseGen)> {
    let mut ops: Vec<(&'static str, CaseGen)> = Vec::new();
    ops.push((
        "conv2d",
        Box::new(|r| {
            let (n, ci, co) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
            let k = [1, 3][r.random_range(0..2)];
            let stride = r.random_range(1..3);
            let pad = r.random_range(0..=k / 2);
            let (h, w) = (r.random_range(k.max(2)..7), r.random_range(k.max(2)..7));
            let inputs = vec![
                uniform(r, &[n, ci, h, w], -1.0, 1.0),
                uniform(r, &[co, ci, k, k], -1.0, 1.0),
                uniform(r, &[co], -1.0, 1.0),
            ];
            let f: Box<Forward> = Box::new(move |t, v| t.conv2d(v[0], v[1], v[2], stride, pad));
            (inputs, f)
        }),
    ));
    ops.push((
        "maxpool2d",
        Box::new(|r| {
            let k = r.random_range(1..4);
            let shape = [
                r.random_range(1..3),
                r.random_range(1..4),
                k * r.random_range(1..4),
                k * r.random_range(1..4),
            ];
            let f: Box<Forward> = Box::new(move |t, v| t.maxpool2d(v[0], k));
            (vec![distinct(r, &shape)], f)
        }),
    ));
    ops.push((
        "upsample_nearest",
        Box::new(|r| {
            let k = r.random_range(1..4);
            let shape = [
                r.random_range(1..3),
                r.random_range(1..4),
                r.random_range(1..4),
                r.random_range(1..4),
            ];
            let f: Box<Forward> = Box::new(move |t, v| t.upsample_nearest(v[0], k));
            (vec![uniform(r, &shape, -1.0, 1.0)], f)
        }),
    ));
    ops.push((
        "adaptive_avgpool",
        Box::new(|r| {
            let (h, w) = (r.random_range(1..8), r.random_range(1..8));
            let (oh, ow) = (r.random_range(1..=h), r.random_range(1..=w));
            let shape = [r.random_range(1..3), r.random_range(1..4), h, w];
            let f: Box<Forward> = Box::new(move |t, v| t.adaptive_avgpool(v[0], oh, ow));
            (vec![uniform(r, &shape, -1.0, 1.0)], f)
        }),
    ));
    ops.push((
        "linear",
        Box::new(|r| {
            let (n, i, o) = (r.random_range(1..5), r.random_range(1..7), r.random_range(1..6));
            let inputs = vec![
                uniform(r, &[n, i], -1.0, 1.0),
                uniform(r, &[o, i], -1.0, 1.0),
                uniform(r, &[o], -1.0, 1.0),
            ];
            let f: Box<Forward> = Box::new(|t, v| t.linear(v[0], v[1], v[2]));
            (inputs, f)
        }),
    ));
    ops.push((
        "relu",
        Box::new(|r| {
            let shape = random_shape(r);
            let f: Box<Forward> = Box::new(|t, v| t.relu(v[0]));
            (vec![off_kink(r, &shape)], f)
        }),
    ));
    ops.push((
        "add",
        Box::new(|r| {
            let shape = random_shape(r);
            let f: Box<Forward> = Box::new(|t, v| t.add(v[0], v[1]));
            (vec![uniform(r, &shape, -1.0, 1.0), uniform(r, &shape, -1.0, 1.0)], f)
        }),
    ));
    ops.push((
        "mul",
        Box::new(|r| {
            let shape = random_shape(r);
            let f: Box<Forward> = Box::new(|t, v| t.mul(v[0], v[1]));
            (vec![uniform(r, &shape, -1.0, 1.0), uniform(r, &shape, -1.0, 1.0)], f)
        }),
    ));
    ops.push((
        "scale",
        Box::new(|r| {
            let shape = random_shape(r);
            let c = r.random_range(-2.0..2.0);
            let f: Box<Forward> = Box::new(move |t, v| t.scale(v[0], c));
            (vec![uniform(r, &shape, -1.0, 1.0)], f)
        }),
    ));
    ops.push((
        "concat_channels",
        Box::new(|r| {
            let (n, h, w) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
            let (ca, cb) = (r.random_range(1..4), r.random_range(1..4));
            let inputs = vec![
                uniform(r, &[n, ca, h, w], -1.0, 1.0),
                uniform(r, &[n, cb, h, w], -1.0, 1.0),
            ];
            let f: Box<Forward> = Box::new(|t, v| t.concat_channels(v[0], v[1]));
            (inputs, f)
        }),
    ));
    ops.push((
        "flatten",
        Box::new(|r| {
            let shape = random_shape(r);
            let f: Box<Forward> = Box::new(|t, v| t.flatten(v[0]));
            (vec![uniform(r, &shape, -1.0, 1.0)], f)
        }),
    ));
    ops.push((
        "reshape",
        Box::new(|r| {
            let shape = random_shape(r);
            let n: usize = shape.iter().product();
            let f: Box<Forward> = Box::new(move |t, v| t.reshape(v[0], vec![1, n]));
            (vec![uniform(r, &shape, -1.0, 1.0)], f)
        }),
    ));
    ops.push((
        "sum",
        Box::new(|r| {
            let shape = random_shape(r);
            let f: Box<Forward> = Box::new(|t, v| t.sum(v[0]));
            (vec![uniform(r, &shape, -1.0, 1.0)], f)
        }),
    ));
    ops.push((
        "softmax_cross_entropy",
        Box::new(|r| {
            let (n, k) = (r.random_range(1..6), r.random_range(2..7));
            let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
            let f: Box<Forward> = Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels));
            (vec![uniform(r, &[n, k], -3.0, 3.0)], f)
        }),
    ));
    ops
}

fn random_shape(r: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = r.random_range(1..5);
    (0..rank).map(|_| r.random_range(1..4)).collect()
}

/// `(op, cases, worst ratio)` for the whole suite.
pub fn run_gradient_suite(seed: u64) -> Vec<(&'static str, usize, f64)> {
    op_suite()
        .into_iter()
        .enumerate()
        .map(|(i, (name, gen))| {
            let mut r = rng(seed.wrapping_add(i as u64 * 7919));
            let worst = (0..CASES_PER_OP)
                .map(|c| {
                    let (inputs, f) = gen(&mut r);
                    gradcheck(&inputs, f.as_ref(), seed ^ c as u64)
                })
                .fold(0.0, f64::max);
            (name, CASES_PER_OP, worst)
        })
        .collect()
}

/// Checks the download invariants on every round it sees.
pub struct ProtocolObserver {
    pub vector_len: usize,
    pub rounds: usize,
    pub violations: Vec<String>,
    snapshots: std::collections::BTreeMap<usize, std::collections::BTreeMap<String, Vec<u32>>>,
}

impl ProtocolObserver {
    pub fn new(vector_len: usize) -> Self {
        ProtocolObserver {
            vector_len,
            rounds: 0,
            violations: Vec::new(),
            snapshots: Default::default(),
        }
    }
}

impl fedunet::federation::RoundObserver for ProtocolObserver {
    fn before_download(&mut self, _round: usize, clients: &[fedunet::federation::ClientState], participants: &[usize]) {
        self.snapshots = participants
            .iter()
            .map(|&id| {
                let snap = fedunet::federation::private_snapshot(
                    clients[id].params(),
                    fedunet::federation::ShareScope::Bottleneck,
                );
                (id, snap)
            })
            .collect();
    }

    fn after_download(&mut self, round: usize, clients: &[fedunet::federation::ClientState], participants: &[usize]) {
        let first = clients[participants[0]].params().extract_bottleneck().0;
        for &id in participants {
            let p = clients[id].params();
            if p.extract_bottleneck().0 != first {
                self.violations
                    .push(format!("round {round}: client {id} disagrees after download"));
            }
            let now = fedunet::federation::private_snapshot(p, fedunet::federation::ShareScope::Bottleneck);
            if self.snapshots.get(&id) != Some(&now) {
                self.violations.push(format!(
                    "round {round}: client {id} private parameters changed by download"
                ));
            }
        }
    }

    fn after_round(&mut self, record: &fedunet::federation::RoundRecord) {
        self.rounds += 1;
        let want = 4 * self.vector_len as u64 * record.participants.len() as u64 * 2;
        let got = record.uploaded_bytes + record.downloaded_bytes;
        if got != want || record.uploaded_bytes != record.downloaded_bytes {
            self.violations
                .push(format!("round {}: metered {got} bytes, expected {want}", record.round));
        }
    }
}

/// Elementwise mean accumulated in f64 in input order, the oracle for the
/// server average.
pub fn wide_mean(vectors: &[Vec<f32>]) -> Vec<f64> {
    let n = vectors.len() as f64;
    (0..vectors[0].len())
        .map(|j| vectors.iter().map(|v| v[j] as f64).sum::<f64>() / n)
        .collect()
}

/// Largest relative deviation of `got` from `want`.
pub fn max_rel_err(got: &[f32], want: &[f64]) -> f64 {
    got.iter()
        .zip(want)
        .map(|(&g, &w)| (g as f64 - w).abs() / w.abs().max(1e-30))
        .filter(|e| e.is_finite())
        .fold(0.0, f64::max)
}
