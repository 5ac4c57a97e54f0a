//! Finite-difference cases covering every tape primitive, shared by the
//! autograd tests and the acceptance suite.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use tgn_seal_autograd::{finite_diff_check, ParamStore, Result, SparseMatrix, Tape, Tensor, Var};

pub const SEEDS: u64 = 20;
pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub type Loss = Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>>;
pub type Case = (ParamStore<f64>, Loss);
pub type Setup = fn(&mut ChaCha8Rng) -> Case;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `Σ w ∘ y` with fixed random weights, so every output element matters.
pub fn weighted(tape: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let wv = tape.constant(w.reshape(tape.shape(y).to_vec())?);
    let p = tape.mul(y, wv)?;
    Ok(tape.sum_all(p))
}

/// Largest relative error over all seeds, or a description of the first failure.
pub fn check(label: &str, setup: Setup) -> std::result::Result<f64, String> {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 1);
        let (mut store, f) = setup(&mut rng);
        let report = finite_diff_check(&mut store, H, TOL, |t, s| f(t, s)).map_err(|e| e.to_string())?;
        if !report.passed() {
            return Err(format!(
                "{label} seed {seed}: max rel error {:.3e}\n{report}",
                report.max_rel_error()
            ));
        }
        worst = worst.max(report.max_rel_error());
    }
    Ok(worst)
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5))
}

pub fn cases() -> Vec<(&'static str, Setup)> {
    vec![
        ("matmul", matmul),
        ("add/sub/mul", add_sub_mul),
        ("add_bias/scale", add_bias_and_scale),
        ("concat/slice/reshape", concat_slice_reshape),
        ("sigmoid/tanh/relu/cos", activations),
        ("softmax", softmax),
        ("sum/mean", reductions),
        ("conv1d/maxpool1d", conv1d_and_maxpool),
        ("spmm/gather_rows", spmm_and_gather),
        ("bce", bce),
        ("sigmoid∘bce", sigmoid_into_bce),
        ("fan-out", shared_parameter_used_twice),
    ]
}

fn matmul(rng: &mut ChaCha8Rng) -> Case {
    let (m, k, n) = dims(rng);
    let mut s = ParamStore::new();
    let a = s.add("a", rand_tensor(rng, &[m, k], -1.0, 1.0)).unwrap();
    let b = s.add("b", rand_tensor(rng, &[k, n], -1.0, 1.0)).unwrap();
    let w = rand_tensor(rng, &[m * n], -1.0, 1.0);
    (s, Box::new(move |t, s| {
        let (av, bv) = (t.param(s, a), t.param(s, b));
        let y = t.matmul(av, bv)?;
        weighted(t, y, &w)
    }))
}

fn add_sub_mul(rng: &mut ChaCha8Rng) -> Case {
    let (m, n, _) = dims(rng);
    let mut s = ParamStore::new();
    let a = s.add("a", rand_tensor(rng, &[m, n], -1.0, 1.0)).unwrap();
    let b = s.add("b", rand_tensor(rng, &[m, n], -1.0, 1.0)).unwrap();
    let w = rand_tensor(rng, &[m * n], -1.0, 1.0);
    (s, Box::new(move |t, s| {
        let (av, bv) = (t.param(s, a), t.param(s, b));
        let sum = t.add(av, bv)?;
        let diff = t.sub(av, bv)?;
        let y = t.mul(sum, diff)?;
        let y = t.mul(y, av)?;
        weighted(t, y, &w)
    }))
}

fn add_bias_and_scale(rng: &mut ChaCha8Rng) -> Case {
    let (m, n, _) = dims(rng);
    let mut s = ParamStore::new();
    let a = s.add("a", rand_tensor(rng, &[m, n], -1.0, 1.0)).unwrap();
    let b = s.add("b", rand_tensor(rng, &[n], -1.0, 1.0)).unwrap();
    let w = rand_tensor(rng, &[m * n], -1.0, 1.0);
    (s, Box::new(move |t, s| {
        let (av, bv) = (t.param(s, a), t.param(s, b));
        let y = t.add_bias(av, bv)?;
        let y = t.scale(y, -1.7);
        weighted(t, y, &w)
    }))
}

fn concat_slice_reshape(rng: &mut ChaCha8Rng) -> Case {
    let (m, n1, n2) = dims(rng);
    let axis = rng.gen_range(0..2);
    let mut s = ParamStore::new();
    let (sa, sb) = if axis == 1 {
        ([m, n1], [m, n2])
    } else {
        ([n1, m], [n2, m])
    };
    let a = s.add("a", rand_tensor(rng, &sa, -1.0, 1.0)).unwrap();
    let b = s.add("b", rand_tensor(rng, &sb, -1.0, 1.0)).unwrap();
    let total = n1 + n2;
    let start = rng.gen_range(0..total);
    let len = rng.gen_range(1..=total - start);
    let w = rand_tensor(rng, &[m * len], -1.0, 1.0);
    (s, Box::new(move |t, s| {
        let (av, bv) = (t.param(s, a), t.param(s, b));
        let c = t.concat(&[av, bv, av], axis)?;
        let c = t.slice(c, axis, start, len)?;
        let shape = t.shape(c).iter().rev().copied().collect::<Vec<_>>();
        let c = t.reshape(c, shape)?;
        weighted(t, c, &w)
    }))
}

fn activations(rng: &mut ChaCha8Rng) -> Case {
    let (m, n, _) = dims(rng);
    let mut s = ParamStore::new();
    let a = s.add("a", rand_tensor(rng, &[m, n], -2.0, 2.0)).unwrap();
    let w: Vec<Tensor<f64>> = (0..4).map(|_| rand_tensor(rng, &[m * n], -1.0, 1.0)).collect();
    (s, Box::new(move |t, s| {
        let av = t.param(s, a);
        let outs = [t.sigmoid(av), t.tanh(av), t.relu(av), t.cos(av)];
        let mut total = weighted(t, outs[0], &w[0])?;
        for (o, wi) in outs.iter().zip(&w).skip(1) {
            let part = weighted(t, *o, wi)?;
            total = t.add(total, part)?;
        }
        Ok(total)
    }))
}

fn softmax(rng: &mut ChaCha8Rng) -> Case {
    let (m, n, k) = dims(rng);
    let axis = rng.gen_range(0..3);
    let mut s = ParamStore::new();
    let a = s.add("a", rand_tensor(rng, &[m, n, k], -2.0, 2.0)).unwrap();
    let w = rand_tensor(rng, &[m * n * k], -1.0, 1.0);
    (s, Box::new(move |t, s| {
        let av = t.param(s, a);
        let y = t.softmax(av, axis)?;
        weighted(t, y, &w)
    }))
}

fn reductions(rng: &mut ChaCha8Rng) -> Case {
    let (m, n, k) = dims(rng);
    let axis = rng.gen_range(0..3);
    let mut s = ParamStore::new();
    let a = s.add("a", rand_tensor(rng, &[m, n, k], -1.0, 1.0)).unwrap();
    let reduced = [m, n, k]
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != axis)
        .map(|(_, d)| d)
        .product::<usize>();
    let w1 = rand_tensor(rng, &[reduced], -1.0, 1.0);
    let w2 = rand_tensor(rng, &[reduced], -1.0, 1.0);
    (s, Box::new(move |t, s| {
        let av = t.param(s, a);
        let sq = t.mul(av, av)?;
        let su = t.sum(sq, axis)?;
        let me = t.mean(av, axis)?;
        let x = weighted(t, su, &w1)?;
        let y = weighted(t, me, &w2)?;
        let z = t.mean_all(sq);
        let xy = t.add(x, y)?;
        t.add(xy, z)
    }))
}

fn conv1d_and_maxpool(rng: &mut ChaCha8Rng) -> Case {
    let c_in = rng.gen_range(1..4);
    let c_out = rng.gen_range(1..4);
    let kernel = rng.gen_range(1..4);
    let stride = rng.gen_range(1..4);
    let len = kernel + stride * rng.gen_range(1..6);
    let l_out = (len - kernel) / stride + 1;
    let width = rng.gen_range(1..=l_out.min(3));
    let pooled = c_out * (l_out / width);
    let mut s = ParamStore::new();
    let x = s.add("x", rand_tensor(rng, &[c_in, len], -1.0, 1.0)).unwrap();
    let w = s.add("w", rand_tensor(rng, &[c_out, c_in, kernel], -1.0, 1.0)).unwrap();
    let b = s.add("b", rand_tensor(rng, &[c_out], -1.0, 1.0)).unwrap();
    let wt = rand_tensor(rng, &[pooled], -1.0, 1.0);
    (s, Box::new(move |t, s| {
        let (xv, wv, bv) = (t.param(s, x), t.param(s, w), t.param(s, b));
        let y = t.conv1d(xv, wv, bv, stride)?;
        let y = t.maxpool1d(y, width)?;
        weighted(t, y, &wt)
    }))
}

fn spmm_and_gather(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.gen_range(1..7);
    let c = rng.gen_range(1..4);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..n).filter(|_| rng.gen_bool(0.4)).collect())
        .collect();
    let matrix = Arc::new(SparseMatrix::mean_aggregation(&neighbors).unwrap());
    let picks: Vec<Option<usize>> = (0..n + 2)
        .map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(0..n)))
        .collect();
    let mut s = ParamStore::new();
    let x = s.add("x", rand_tensor(rng, &[n, c], -1.0, 1.0)).unwrap();
    let w = rand_tensor(rng, &[(n + 2) * c], -1.0, 1.0);
    (s, Box::new(move |t, s| {
        let xv = t.param(s, x);
        let y = t.spmm(Arc::clone(&matrix), xv)?;
        let y = t.tanh(y);
        let y = t.gather_rows(y, picks.clone())?;
        weighted(t, y, &w)
    }))
}

fn bce(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.gen_range(1..8);
    let labels: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let mut s = ParamStore::new();
    let p = s.add("p", rand_tensor(rng, &[n], 0.05, 0.95)).unwrap();
    (s, Box::new(move |t, s| {
        let pv = t.param(s, p);
        t.bce(pv, &labels)
    }))
}

fn sigmoid_into_bce(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.gen_range(1..8);
    let labels: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let mut s = ParamStore::new();
    let z = s.add("z", rand_tensor(rng, &[n], -3.0, 3.0)).unwrap();
    (s, Box::new(move |t, s| {
        let zv = t.param(s, z);
        let p = t.sigmoid(zv);
        t.bce(p, &labels)
    }))
}

fn shared_parameter_used_twice(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.gen_range(1..5);
    let mut s = ParamStore::new();
    let a = s.add("a", rand_tensor(rng, &[n, n], -1.0, 1.0)).unwrap();
    let w = rand_tensor(rng, &[n * n], -1.0, 1.0);
    (s, Box::new(move |t, s| {
        let a1 = t.param(s, a);
        let a2 = t.param(s, a);
        let y = t.matmul(a1, a2)?;
        weighted(t, y, &w)
    }))
}
