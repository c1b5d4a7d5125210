//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

use crackseg::gradcheck::relative_error;
use crackseg::loss::combined_loss;
use crackseg::metrics::EvalItem;
use crackseg::scan::{Direction, ScanPathSet, ScanStrategy};
use crackseg::ssm::SsmParams;
use crackseg::tensor::Init;
use crackseg::{LossConfig, Model, NetworkConfig, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// SSM parameters with every tensor redrawn so that instances differ in
/// decay, step size and projections.
pub fn random_ssm(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d: usize, g: usize) -> SsmParams {
    let p = SsmParams::init(store, &mut Init::new(rng.random()), prefix, d, g).unwrap();
    *store.get_mut(p.p_log) = rand_tensor(rng, &[g, d], -1.5, 1.5);
    *store.get_mut(p.delta_w) = rand_tensor(rng, &[d, d], -0.5, 0.5);
    *store.get_mut(p.delta_b) = rand_tensor(rng, &[d], -2.0, 1.0);
    *store.get_mut(p.q_w) = rand_tensor(rng, &[d, g], -1.0, 1.0);
    *store.get_mut(p.r_w) = rand_tensor(rng, &[d, g], -1.0, 1.0);
    *store.get_mut(p.s) = rand_tensor(rng, &[d], -1.0, 1.0);
    p
}

fn project(w: &[f64], l: usize, din: usize, m: &Tensor, dout: usize) -> Vec<Vec<f64>> {
    (0..l)
        .map(|t| {
            (0..dout)
                .map(|o| (0..din).map(|i| w[t * din + i] * m.data()[i * dout + o]).sum())
                .collect()
        })
        .collect()
}

/// Straight per-step recurrence over one `[L, D]` sequence, materializing
/// every hidden state.
pub fn naive_scan(store: &ParamStore, p: &SsmParams, seq: &Tensor) -> Tensor {
    let (l, d, g) = (seq.shape()[0], seq.shape()[1], p.state_dim);
    let w = seq.data();
    let pre = project(w, l, d, store.get(p.delta_w), d);
    let bias = store.get(p.delta_b).data();
    let q = project(w, l, d, store.get(p.q_w), g);
    let r = project(w, l, d, store.get(p.r_w), g);
    let a: Vec<f64> = store.get(p.p_log).data().iter().map(|v| -v.exp()).collect();
    let s = store.get(p.s).data();
    let mut z = vec![vec![0.0; d]; g];
    let mut out = Tensor::zeros([l, d]);
    for t in 0..l {
        for gi in 0..g {
            for di in 0..d {
                let dt = (1.0 + (pre[t][di] + bias[di]).exp()).ln();
                let pa = a[gi * d + di];
                let pbar = (dt * pa).exp();
                let qbar = (pbar - 1.0) / pa * q[t][gi];
                z[gi][di] = pbar * z[gi][di] + qbar * w[t * d + di];
            }
        }
        for di in 0..d {
            let mut u = s[di] * w[t * d + di];
            for gi in 0..g {
                u += r[t][gi] * z[gi][di];
            }
            out.set(&[t, di], u);
        }
    }
    out
}

/// Relative error of every parameter gradient of `loss` against central
/// differences, as `(name, error)` pairs. `loss` builds its graph on the
/// given store and returns the scalar loss node.
pub fn param_grad_errors<F>(store: &ParamStore, step: f64, loss: F) -> Vec<(String, f64)>
where
    F: Fn(&mut crackseg::Graph, &ParamStore) -> crackseg::Var,
{
    let mut g = crackseg::Graph::new();
    let l = loss(&mut g, store);
    g.backward(l).unwrap();
    let grads = g.param_grads(store);
    let eval = |st: &ParamStore| {
        let mut g = crackseg::Graph::new();
        let l = loss(&mut g, st);
        g.value(l).item()
    };
    let mut out = Vec::new();
    let mut work = store.clone();
    for id in store.ids() {
        let Some(analytic) = grads[id.index()].clone() else { continue };
        let mut numeric = vec![0.0; analytic.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + step;
            let plus = eval(&work);
            work.get_mut(id).data_mut()[j] = orig - step;
            let minus = eval(&work);
            work.get_mut(id).data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        out.push((
            store.name(id).to_string(),
            crackseg::gradcheck::relative_error(analytic.data(), &numeric),
        ));
    }
    out
}

/// Threshold sweep recomputed with plain pixel loops.
#[derive(Debug)]
pub struct BruteEval {
    pub ods: f64,
    pub ods_threshold: f64,
    pub ois: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub miou: f64,
}

fn prf(tp: u64, fp: u64, fneg: u64) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f = if tp + fp + fneg == 0 {
        1.0
    } else if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

pub fn brute_force_eval(images: &[(Vec<f64>, Vec<bool>)], thresholds: &[f64]) -> BruteEval {
    let mut pooled = vec![[0u64; 4]; thresholds.len()];
    let mut best_sum = 0.0;
    for (prob, gt) in images {
        let mut best = f64::NEG_INFINITY;
        for (k, &t) in thresholds.iter().enumerate() {
            let mut c = [0u64; 4];
            for i in 0..prob.len() {
                let slot = match (prob[i] > t, gt[i]) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                };
                c[slot] += 1;
                pooled[k][slot] += 1;
            }
            let f = prf(c[0], c[1], c[2]).2;
            if f > best {
                best = f;
            }
        }
        best_sum += best;
    }
    let mut bk = 0;
    for k in 1..thresholds.len() {
        if prf(pooled[k][0], pooled[k][1], pooled[k][2]).2 > prf(pooled[bk][0], pooled[bk][1], pooled[bk][2]).2 {
            bk = k;
        }
    }
    let [tp, fp, fneg, tn] = pooled[bk];
    let (p, r, f) = prf(tp, fp, fneg);
    let iou = |a: u64, b: u64| if a + b == 0 { 1.0 } else { a as f64 / (a + b) as f64 };
    BruteEval {
        ods: f,
        ods_threshold: thresholds[bk],
        ois: best_sum / images.len() as f64,
        precision: p,
        recall: r,
        f1: f,
        miou: 0.5 * (iou(tp, fp + fneg) + iou(tn, fp + fneg)),
    }
}

/// A random image pair no larger than 8x8. Some probabilities sit exactly
/// on grid thresholds.
pub fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(1..=8) * rng.random_range(1..=8);
    let prob = (0..n)
        .map(|_| if rng.random_bool(0.2) { rng.random_range(1..100) as f64 / 100.0 } else { rng.random::<f64>() })
        .collect();
    let gt = (0..n).map(|_| rng.random_bool(0.3)).collect();
    (prob, gt)
}

/// Central differences on `per_tensor` randomly chosen entries of every
/// parameter tensor. Returns `(name, analytic, numeric)` per tensor.
pub fn sampled_param_gradients<F>(
    store: &ParamStore,
    per_tensor: usize,
    seed: u64,
    step: f64,
    loss: F,
) -> Vec<(String, Vec<f64>, Vec<f64>)>
where
    F: Fn(&mut crackseg::Graph, &ParamStore) -> crackseg::Var,
{
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = crackseg::Graph::new();
    let l = loss(&mut g, store);
    g.backward(l).unwrap();
    let grads = g.param_grads(store);
    let eval = |st: &ParamStore| {
        let mut g = crackseg::Graph::new();
        let l = loss(&mut g, st);
        g.value(l).item()
    };
    let mut work = store.clone();
    let mut out = Vec::new();
    for id in store.ids() {
        let analytic_all = grads[id.index()].clone().expect("every parameter is used");
        let n = analytic_all.numel();
        let picks: Vec<usize> = if n <= per_tensor { (0..n).collect() } else { (0..per_tensor).map(|_| rng.random_range(0..n)).collect() };
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for j in picks {
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + step;
            let plus = eval(&work);
            work.get_mut(id).data_mut()[j] = orig - step;
            let minus = eval(&work);
            work.get_mut(id).data_mut()[j] = orig;
            analytic.push(analytic_all.data()[j]);
            numeric.push((plus - minus) / (2.0 * step));
        }
        out.push((store.name(id).to_string(), analytic, numeric));
    }
    out
}

/// Every parameter redrawn uniformly. Weights use a `scale / sqrt(fan_in)`
/// bound so activations stay moderate through deep stacks; norm scales stay
/// positive and the SSM tensors keep the ranges used by [`random_ssm`].
pub fn randomize_store(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let shape = store.get(id).shape().to_vec();
        let (lo, hi) = if name.ends_with("gamma") {
            (0.5, 1.5)
        } else if name.ends_with("p_log") {
            (-1.0, 1.0)
        } else if name.ends_with("delta_b") {
            (-2.0, 0.5)
        } else if shape.len() == 1 || name.ends_with(".pos") {
            (-0.2 * scale, 0.2 * scale)
        } else {
            let fan_in = if name.ends_with("delta_w") || name.ends_with("q_w") || name.ends_with("r_w") {
                shape[0]
            } else {
                shape[1..].iter().product()
            };
            let b = scale / (fan_in as f64).sqrt();
            (-b, b)
        };
        *store.get_mut(id) = rand_tensor(rng, &shape, lo, hi);
    }
}

/// Row-major cell indices of an `h x w` grid sorted by `key(i, j)`.
fn sorted_cells<K: Ord>(h: usize, w: usize, key: impl Fn(usize, usize) -> K) -> Vec<usize> {
    let mut cells: Vec<(usize, usize)> = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).collect();
    cells.sort_by_key(|&(i, j)| key(i, j));
    cells.into_iter().map(|(i, j)| i * w + j).collect()
}

fn rev(v: Vec<usize>) -> Vec<usize> {
    v.into_iter().rev().collect()
}

fn mirror(v: &[usize], w: usize) -> Vec<usize> {
    v.iter().map(|&c| (c / w) * w + (w - 1 - c % w)).collect()
}

/// Expected orders of the four paths of each strategy, built by sorting
/// cells on a traversal key rather than by walking the grid.
pub fn expected_orders(strategy: ScanStrategy, h: usize, w: usize) -> Vec<Vec<usize>> {
    let hi = h as i64;
    let rows = sorted_cells(h, w, |i, j| (i, j));
    let cols = sorted_cells(h, w, |i, j| (j, i));
    let vsnake = sorted_cells(h, w, |i, j| (j, if j % 2 == 0 { i as i64 } else { -(i as i64) }));
    let hsnake = sorted_cells(h, w, |i, j| {
        let k = hi - 1 - i as i64;
        let leftward = (hi % 2 == 1) != (k % 2 == 1);
        (k, if leftward { -(j as i64) } else { j as i64 })
    });
    let diag = sorted_cells(h, w, |i, j| (i + j, i));
    let dsnake = sorted_cells(h, w, |i, j| (i + j, if (i + j) % 2 == 0 { -(i as i64) } else { i as i64 }));
    match strategy {
        ScanStrategy::Parallel => vec![rows.clone(), cols.clone(), rev(rows), rev(cols)],
        ScanStrategy::Diagonal => {
            let m = mirror(&diag, w);
            vec![diag.clone(), m.clone(), rev(diag), rev(m)]
        }
        ScanStrategy::ParallelSnake => vec![vsnake.clone(), hsnake.clone(), rev(vsnake), rev(hsnake)],
        ScanStrategy::DiagonalSnake => {
            let m = mirror(&dsnake, w);
            vec![dsnake.clone(), m.clone(), rev(dsnake), rev(m)]
        }
        ScanStrategy::Bidirectional => vec![rows.clone(), rev(rows), cols.clone(), rev(cols)],
        ScanStrategy::Sass => {
            let m = mirror(&dsnake, w);
            vec![vsnake, hsnake, dsnake, m]
        }
    }
}

/// Every property violation of the generated paths over all grids up to
/// `max_side x max_side`. Empty means the suite passed.
pub fn scan_suite(max_side: usize) -> Vec<String> {
    let mut bad = Vec::new();
    for h in 1..=max_side {
        for w in 1..=max_side {
            let mut four = Vec::new();
            for s in ScanStrategy::ALL {
                let set = match ScanPathSet::generate(s, h, w, 4) {
                    Ok(set) => set,
                    Err(e) => {
                        bad.push(format!("{s} {h}x{w}: {e}"));
                        continue;
                    }
                };
                if set.len() != 4 {
                    bad.push(format!("{s} {h}x{w}: {} paths", set.len()));
                }
                let expected = expected_orders(s, h, w);
                for (k, p) in set.paths().iter().enumerate() {
                    let tag = format!("{s} {h}x{w} path {k}");
                    let mut sorted = p.order().to_vec();
                    sorted.sort_unstable();
                    if sorted != (0..h * w).collect::<Vec<_>>() {
                        bad.push(format!("{tag}: not a permutation"));
                    }
                    if (0..h * w).any(|t| p.inverse().get(p.order()[t]) != Some(&t)) {
                        bad.push(format!("{tag}: inverse mismatch"));
                    }
                    if p.directions().len() != h * w || p.directions()[0] != Direction::Start {
                        bad.push(format!("{tag}: bad direction header"));
                    }
                    for t in 1..h * w {
                        let (a, b) = (p.order()[t - 1], p.order()[t]);
                        let di = (b / w) as isize - (a / w) as isize;
                        let dj = (b % w) as isize - (a % w) as isize;
                        let want = match (di.signum(), dj.signum()) {
                            (0, 1) => Direction::Right,
                            (0, -1) => Direction::Left,
                            (1, 0) => Direction::Down,
                            (-1, 0) => Direction::Up,
                            _ => Direction::DiagStep,
                        };
                        if p.directions()[t] != want {
                            bad.push(format!("{tag}: direction {t}"));
                        }
                        if s.is_snake() && (di.abs() > 1 || dj.abs() > 1) {
                            bad.push(format!("{tag}: jump at step {t}"));
                        }
                    }
                    if expected.get(k).map(Vec::as_slice) != Some(p.order()) {
                        bad.push(format!("{tag}: order differs from reference"));
                    }
                }
                four.push((s, set));
            }
            let get = |s: ScanStrategy| four.iter().find(|(t, _)| *t == s).map(|(_, set)| set.paths());
            if let (Some(sass), Some(ps), Some(ds)) =
                (get(ScanStrategy::Sass), get(ScanStrategy::ParallelSnake), get(ScanStrategy::DiagonalSnake))
            {
                if sass[..2] != ps[..2] || sass[2..] != ds[..2] {
                    bad.push(format!("sass {h}x{w}: not two parallel snakes and two diagonal snakes"));
                }
                match ScanPathSet::generate(ScanStrategy::Sass, h, w, 2) {
                    Ok(two) if two.paths() == [sass[0].clone(), sass[2].clone()] => {}
                    _ => bad.push(format!("sass {h}x{w}: two-path set")),
                }
            }
        }
    }
    bad
}

pub fn eval_items<'a>(images: &'a [(Vec<f64>, Vec<bool>)]) -> Vec<EvalItem<'a>> {
    images
        .iter()
        .enumerate()
        .map(|(i, (p, g))| EvalItem { id: format!("img{i}"), prob: p, gt: g })
        .collect()
}

pub fn dice_plain(p: &[f64], t: &[f64], eps: f64) -> f64 {
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut st = 0.0;
    for i in 0..p.len() {
        inter += p[i] * t[i];
        sp += p[i];
        st += t[i];
    }
    1.0 - (2.0 * inter + eps) / (sp + st + eps)
}

pub fn bce_plain(p: &[f64], t: &[f64], clamp: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        let q = p[i].clamp(clamp, 1.0 - clamp);
        s += -(t[i] * q.ln() + (1.0 - t[i]) * (1.0 - q).ln());
    }
    s / p.len() as f64
}

pub fn random_model(cfg: NetworkConfig, seed: u64) -> Model {
    let mut m = Model::new(cfg, seed).unwrap();
    randomize_store(&mut m.store, &mut ChaCha8Rng::seed_from_u64(seed + 100), 1.0);
    m
}

/// Pooled relative error of sampled parameter gradients of the micro
/// network's training loss against central differences.
pub fn micro_gradient_error(per_tensor: usize) -> f64 {
    let model = random_model(NetworkConfig::micro(), 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let images = rand_tensor(&mut rng, &[1, 3, 32, 32], 0.0, 1.0);
    let target = Tensor::from_fn([1, 1, 32, 32], |i| if (i / 32 + i % 32) % 7 == 0 { 1.0 } else { 0.0 });
    let cfg = LossConfig::default();
    let rows = sampled_param_gradients(&model.store, per_tensor, 23, 1e-7, |g, store| {
        let x = g.input(images.clone());
        let t = g.input(target.clone());
        let logits = model.forward_with(g, store, x).unwrap();
        let p = g.sigmoid(logits).unwrap();
        combined_loss(g, p, t, &cfg).unwrap().total
    });
    let (all_a, all_n): (Vec<f64>, Vec<f64>) = rows.iter().flat_map(|(_, a, n)| a.iter().copied().zip(n.iter().copied())).unzip();
    relative_error(&all_a, &all_n)
}
