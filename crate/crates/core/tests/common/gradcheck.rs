//! Reverse-mode gradients against central finite differences of the f64
//! oracle, one check per differentiable operation and per full network.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super as oracle;
use super::Pattern;
use pairdist::autodiff::{ParamSet, Tape, Tensor, Var};
use pairdist::models::{init_random, AnyModel, BCnn2Net, Network, PairInput};

pub const H: f64 = 1e-4;
pub const KINK_GUARD: f64 = 1e-3;
pub const OP_TOL: f64 = 1e-4;
pub const XENT_TOL: f64 = 1e-5;
pub const GRAPH_TOL: f64 = 1e-3;
pub const INSTANCES: u64 = 24;

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(rng, n, lo, hi)).unwrap()
}

fn split<'a>(x: &'a [f64], sizes: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &n in sizes {
        out.push(&x[at..at + n]);
        at += n;
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct Tally {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
}

impl Tally {
    pub fn summary(&self) -> String {
        format!(
            "{} coordinates checked, {} skipped near kinks, worst relative error {:.2e}",
            self.checked, self.skipped, self.worst
        )
    }

    /// Why the check fails at tolerance `tol`, if it does.
    pub fn failure(&self, tol: f64) -> Option<String> {
        if self.checked == 0 {
            Some("nothing checked".into())
        } else if self.skipped > self.checked {
            Some(format!(
                "too many coordinates near kinks ({} of {})",
                self.skipped,
                self.checked + self.skipped
            ))
        } else if self.worst > tol {
            Some(format!("worst relative error {:.3e} > {tol:e}", self.worst))
        } else {
            None
        }
    }

    pub fn finish(&self, op: &str, tol: f64) {
        eprintln!("{op}: {}", self.summary());
        if let Some(msg) = self.failure(tol) {
            panic!("{op}: {msg}");
        }
    }
}

/// Registers `inputs` as parameters, builds `op` on them, reduces the
/// output with random weights `c` and returns the tape gradient of every
/// input together with `c`.
fn tape_grads<F>(inputs: &[Tensor], rng: &mut ChaCha8Rng, op: F) -> (Vec<Vec<f32>>, Vec<f64>)
where
    F: for<'p> Fn(&mut Tape<'p>, &[Var]) -> Var,
{
    let mut params = ParamSet::new();
    let ids: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| params.add(format!("in{i}"), t.clone()).unwrap())
        .collect();
    let mut tape = Tape::new(&params);
    let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
    let out = op(&mut tape, &vars);
    let out = tape.flatten(out).unwrap();
    let n = tape.value(out).len();
    let c = uniform(rng, n, -1.0, 1.0);
    let w = tape.constant(Tensor::new(vec![1, n], c.clone()).unwrap());
    let b = tape.constant(Tensor::zeros(vec![1]));
    let loss = tape.affine(out, w, b).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = ids
        .iter()
        .map(|&id| grads.get(id).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; params.get(id).value.len()]))
        .collect();
    (g, c.into_iter().map(f64::from).collect())
}

/// Compares every coordinate of every input against finite differences of
/// `oracle`, which maps the concatenated inputs to the scalar loss.
fn check_all<F>(inputs: &[Tensor], analytic: &[Vec<f32>], guard: f64, tally: &mut Tally, oracle: F)
where
    F: Fn(&[f64], &mut Pattern) -> f64,
{
    let mut x: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().map(|&v| f64::from(v))).collect();
    let flat: Vec<f32> = analytic.concat();
    for i in 0..x.len() {
        match oracle::central_diff(&mut x, i, H, guard, &oracle) {
            Some(num) => {
                tally.checked += 1;
                tally.worst = tally.worst.max(oracle::rel_err(f64::from(flat[i]), num));
            }
            None => tally.skipped += 1,
        }
    }
}

fn weighted(out: &[f64], c: &[f64]) -> f64 {
    out.iter().zip(c).map(|(a, b)| a * b).sum()
}

pub fn conv2d() -> Tally {
    let mut tally = Tally::default();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(1..=3);
        let (h, w) = (rng.random_range(3..=16), rng.random_range(3..=16));
        let (kh, kw) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let co = rng.random_range(1..=4);
        let stride = rng.random_range(1..=2);
        let inputs = [
            tensor(&mut rng, &[c, h, w], -1.0, 1.0),
            tensor(&mut rng, &[co, c, kh, kw], -1.0, 1.0),
            tensor(&mut rng, &[co], -1.0, 1.0),
        ];
        let (g, wts) = tape_grads(&inputs, &mut rng, |t, v| t.conv2d(v[0], v[1], v[2], stride).unwrap());
        let sizes: Vec<usize> = inputs.iter().map(Tensor::len).collect();
        check_all(&inputs, &g, H, &mut tally, |x, _| {
            let p = split(x, &sizes);
            let (out, _) = oracle::conv2d(p[0], (c, h, w), p[1], (co, kh, kw), p[2], stride);
            weighted(&out, &wts)
        });
    }
    tally
}

pub fn conv2d_reference_shape() -> Tally {
    // 1×12×12 input, two 3×3 filters.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let inputs = [
        tensor(&mut rng, &[1, 12, 12], -1.0, 1.0),
        tensor(&mut rng, &[2, 1, 3, 3], -1.0, 1.0),
        tensor(&mut rng, &[2], -1.0, 1.0),
    ];
    let (g, wts) = tape_grads(&inputs, &mut rng, |t, v| t.conv2d(v[0], v[1], v[2], 1).unwrap());
    let sizes: Vec<usize> = inputs.iter().map(Tensor::len).collect();
    let mut tally = Tally::default();
    check_all(&inputs, &g, H, &mut tally, |x, _| {
        let p = split(x, &sizes);
        weighted(&oracle::conv2d(p[0], (1, 12, 12), p[1], (2, 3, 3), p[2], 1).0, &wts)
    });
    tally
}

pub fn maxpool() -> Tally {
    let mut tally = Tally::default();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let c = rng.random_range(1..=4);
        let (h, w) = (rng.random_range(2..=16), rng.random_range(2..=16));
        let inputs = [tensor(&mut rng, &[c, h, w], -1.0, 1.0)];
        let (g, wts) = tape_grads(&inputs, &mut rng, |t, v| t.maxpool2d(v[0]).unwrap());
        check_all(&inputs, &g, KINK_GUARD, &mut tally, |x, pat| {
            weighted(&oracle::maxpool2(x, (c, h, w), pat).0, &wts)
        });
    }
    tally
}

pub fn relu() -> Tally {
    let mut tally = Tally::default();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let shape = [rng.random_range(1..=4), rng.random_range(1..=16), rng.random_range(1..=16)];
        let inputs = [tensor(&mut rng, &shape, -1.0, 1.0)];
        let (g, wts) = tape_grads(&inputs, &mut rng, |t, v| t.relu(v[0]));
        check_all(&inputs, &g, KINK_GUARD, &mut tally, |x, pat| weighted(&oracle::relu(x, pat), &wts));
    }
    tally
}

pub fn affine() -> Tally {
    let mut tally = Tally::default();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (m, n) = if seed == 0 { (3, 5) } else { (rng.random_range(1..=16), rng.random_range(1..=16)) };
        let inputs = [
            tensor(&mut rng, &[n], -1.0, 1.0),
            tensor(&mut rng, &[m, n], -1.0, 1.0),
            tensor(&mut rng, &[m], -1.0, 1.0),
        ];
        let (g, wts) = tape_grads(&inputs, &mut rng, |t, v| t.affine(v[0], v[1], v[2]).unwrap());
        let sizes = [n, m * n, m];
        check_all(&inputs, &g, H, &mut tally, |x, _| {
            let p = split(x, &sizes);
            weighted(&oracle::affine(p[0], p[1], p[2]), &wts)
        });
    }
    tally
}

pub fn softmax_xent() -> Tally {
    let mut tally = Tally::default();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let k = rng.random_range(2..=16);
        let label = rng.random_range(0..k);
        let inputs = [tensor(&mut rng, &[k], -4.0, 4.0)];
        let mut params = ParamSet::new();
        let id = params.add("z", inputs[0].clone()).unwrap();
        let mut tape = Tape::new(&params);
        let z = tape.param(id);
        let l = tape.softmax_xent(z, label).unwrap();
        let want = oracle::xent(&inputs[0].data().iter().map(|&v| f64::from(v)).collect::<Vec<_>>(), label);
        assert!((tape.loss_value(l).unwrap() - want).abs() < 1e-5);
        let g = tape.backward(l).unwrap();
        check_all(&inputs, &[g.get(id).unwrap().to_vec()], H, &mut tally, |x, _| oracle::xent(x, label));
    }
    tally
}

pub fn pairwise_euclidean() -> Tally {
    let mut tally = Tally::default();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let (f, s) = if seed == 0 { (4, 8) } else { (rng.random_range(1..=16), rng.random_range(1..=16)) };
        let inputs = [tensor(&mut rng, &[f, s], -1.0, 1.0), tensor(&mut rng, &[f, s], -1.0, 1.0)];
        let (g, wts) = tape_grads(&inputs, &mut rng, |t, v| t.pairwise_euclidean(v[0], v[1], 1e-12).unwrap());
        check_all(&inputs, &g, H, &mut tally, |x, _| {
            let p = split(x, &[f * s, f * s]);
            weighted(&oracle::euclidean(p[0], p[1], f, s, 1e-12), &wts)
        });
    }
    tally
}

pub fn dropout() -> Tally {
    let mut tally = Tally::default();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let n = rng.random_range(1..=16) * rng.random_range(1..=16);
        let p = [0.1f32, 0.5, 0.8][seed as usize % 3];
        let inputs = [tensor(&mut rng, &[n], -1.0, 1.0)];
        let mask_seed = rng.random::<u64>();
        let (g, wts) = tape_grads(&inputs, &mut rng, |t, v| {
            let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
            t.dropout(v[0], p, true, &mut r).unwrap()
        });
        // Same draws as the tape: one uniform per element, dropped below p.
        let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
        let mask: Vec<f64> = (0..n)
            .map(|_| if r.random::<f32>() < p { 0.0 } else { 1.0 / (1.0 - f64::from(p)) })
            .collect();
        check_all(&inputs, &g, H, &mut tally, |x, _| {
            x.iter().zip(&mask).zip(&wts).map(|((a, m), c)| a * m * c).sum()
        });
    }
    tally
}

pub fn reshape_sum() -> Tally {
    let mut tally = Tally::default();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let (a, b) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let inputs = [tensor(&mut rng, &[a, b], -1.0, 1.0)];
        let mut params = ParamSet::new();
        let id = params.add("x", inputs[0].clone()).unwrap();
        let mut tape = Tape::new(&params);
        let x = tape.param(id);
        let y = tape.reshape(x, &[b, a]).unwrap();
        let y = tape.relu(y);
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        check_all(&inputs, &[g.get(id).unwrap().to_vec()], KINK_GUARD, &mut tally, |x, pat| {
            oracle::relu(x, pat).iter().sum()
        });
    }
    tally
}

/// Oracle view of a parameter set.
fn oracle_params(params: &ParamSet) -> oracle::Params {
    params
        .iter()
        .map(|p| {
            let v = p.value.data().iter().map(|&x| f64::from(x)).collect();
            (p.name.clone(), (p.value.shape().to_vec(), v))
        })
        .collect()
}

/// Replaces every value (biases included) with `U(-b, b)` draws scaled to
/// the tensor's fan-in so no unit starts exactly at zero.
fn randomise(params: &mut ParamSet, rng: &mut ChaCha8Rng) {
    for p in params.iter_mut() {
        let fan_in = if p.value.rank() > 1 { p.value.len() / p.value.shape()[0] } else { 4 };
        let b = (1.0 / fan_in as f32).sqrt();
        for v in p.value.data_mut() {
            *v = rng.random_range(-b..b);
        }
    }
}

/// Checks `per_param` kink-free random coordinates of every parameter.
fn check_graph<N, F>(net: &N, input: &N::Input, label: usize, rng: &mut ChaCha8Rng, tally: &mut Tally, logits: F)
where
    N: Network,
    F: Fn(&oracle::Params, &mut Pattern) -> Vec<f64>,
{
    const PER_PARAM: usize = 5;
    const MAX_TRIES: usize = 60;
    let mut drng = ChaCha8Rng::seed_from_u64(0);
    let (loss, grads) = net.loss_and_grad(input, label, false, &mut drng, 1.0).unwrap();
    let mut op = oracle_params(net.params());
    let want = oracle::xent(&logits(&op, &mut Pattern::default()), label);
    assert!((loss - want).abs() <= 1e-4 * want.abs().max(1.0), "loss {loss} vs oracle {want}");

    for p in net.params().iter() {
        let id = net.params().id(&p.name).unwrap();
        let g = grads.get(id).expect("every parameter receives a gradient");
        let mut done = 0;
        for _ in 0..MAX_TRIES {
            if done == PER_PARAM {
                break;
            }
            let i = rng.random_range(0..p.value.len());
            let name = p.name.clone();
            let mut x = op[&name].1.clone();
            let num = oracle::central_diff(&mut x, i, H, H, |x, pat| {
                let mut q = op.clone();
                q.get_mut(&name).unwrap().1 = x.to_vec();
                oracle::xent(&logits(&q, pat), label)
            });
            op.get_mut(&name).unwrap().1 = x;
            match num {
                Some(num) => {
                    done += 1;
                    tally.checked += 1;
                    tally.worst = tally.worst.max(oracle::rel_err(f64::from(g[i]), num));
                }
                None => tally.skipped += 1,
            }
        }
        assert_eq!(done, PER_PARAM, "{}: too few kink-free coordinates", p.name);
    }
}

fn graph_sizes(rng: &mut ChaCha8Rng, seed: u64) -> (usize, usize) {
    // Most instances are small; the last two use the default geometry.
    if seed >= 20 {
        (53, 56)
    } else {
        (rng.random_range(2..=16), rng.random_range(31..=40))
    }
}

pub fn proposed_graph() -> Tally {
    let mut tally = Tally::default();
    for seed in 0..22 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let (f, s) = graph_sizes(&mut rng, seed);
        let AnyModel::Proposed(mut net) = init_random(pairdist::models::ModelKind::Proposed, f, s, seed).unwrap() else {
            unreachable!()
        };
        randomise(net.params_mut(), &mut rng);
        let test = tensor(&mut rng, &[f, s], -1.0, 1.0);
        let reference = tensor(&mut rng, &[f, s], -1.0, 1.0);
        let t64: Vec<f64> = test.data().iter().map(|&v| f64::from(v)).collect();
        let r64: Vec<f64> = reference.data().iter().map(|&v| f64::from(v)).collect();
        let input = PairInput::new(Arc::new(test), Arc::new(reference));
        let label = (seed % 2) as usize;
        check_graph(&net, &input, label, &mut rng, &mut tally, |q, pat| {
            oracle::proposed_logits(q, &t64, &r64, f, s, pat)
        });
    }
    tally
}

pub fn bcnn2_graph() -> Tally {
    let mut tally = Tally::default();
    for seed in 0..22 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let (f, s) = graph_sizes(&mut rng, seed);
        let AnyModel::Bcnn2(mut net) = init_random(pairdist::models::ModelKind::Bcnn2, f, s, seed).unwrap() else {
            unreachable!()
        };
        randomise(net.params_mut(), &mut rng);
        let pair = PairInput::new(
            Arc::new(tensor(&mut rng, &[f, s], 0.01, 1.0)),
            Arc::new(tensor(&mut rng, &[f, s], 0.01, 1.0)),
        );
        let image = BCnn2Net::distance_image(&pair).unwrap();
        let img64: Vec<f64> = image.data().iter().map(|&v| f64::from(v)).collect();
        let label = (seed % 2) as usize;
        check_graph(&net, &image, label, &mut rng, &mut tally, |q, pat| oracle::classifier(q, &img64, s, pat));
    }
    tally
}

pub fn bcnn1_graph() -> Tally {
    let mut tally = Tally::default();
    for seed in 0..22 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let f = if seed >= 20 { 53 } else { rng.random_range(1..=16) };
        let AnyModel::Bcnn1(mut net) = init_random(pairdist::models::ModelKind::Bcnn1, f, 16, seed).unwrap() else {
            unreachable!()
        };
        randomise(net.params_mut(), &mut rng);
        let seg = tensor(&mut rng, &[f, 16], -2.0, 2.0);
        let seg64: Vec<f64> = seg.data().iter().map(|&v| f64::from(v)).collect();
        let label = (seed % 2) as usize;
        check_graph(&net, &seg, label, &mut rng, &mut tally, |q, pat| oracle::bcnn1_logits(q, &seg64, f, pat));
    }
    tally
}

pub type Check = (&'static str, fn() -> Tally, f64);

/// Every check with its tolerance.
pub const CHECKS: &[Check] = &[
    ("conv2d", conv2d, OP_TOL),
    ("conv2d 1x12x12", conv2d_reference_shape, OP_TOL),
    ("maxpool2d", maxpool, OP_TOL),
    ("relu", relu, OP_TOL),
    ("affine", affine, OP_TOL),
    ("softmax_xent", softmax_xent, XENT_TOL),
    ("pairwise_euclidean", pairwise_euclidean, OP_TOL),
    ("dropout", dropout, OP_TOL),
    ("reshape+sum", reshape_sum, OP_TOL),
    ("proposed graph", proposed_graph, GRAPH_TOL),
    ("bcnn2 graph", bcnn2_graph, GRAPH_TOL),
    ("bcnn1 graph", bcnn1_graph, GRAPH_TOL),
];
