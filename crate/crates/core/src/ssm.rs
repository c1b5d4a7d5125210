//! Input-dependent selective state-space scan.
//!
//! For a sequence `w[t, d]` the recurrence is
//!
//! ```text
//! Pbar[t,g,d] = exp(delta[t,d] * P[g,d])
//! Qbar[t,g,d] = (exp(delta[t,d] * P[g,d]) - 1) / P[g,d] * Q[t,g]
//! z[t,g,d]    = Pbar[t,g,d] * z[t-1,g,d] + Qbar[t,g,d] * w[t,d]
//! u[t,d]      = sum_g R[t,g] * z[t,g,d] + S[d] * w[t,d]
//! ```
//!
//! with `z[-1] = 0`, `P = -exp(p_log)`, `delta = softplus(w Wd + bd)`,
//! `Q = w Wq` and `R = w Wr`. The recurrence runs as one fused graph node
//! with a hand-written reverse pass.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scan::ScanPathSet;
use crate::tensor::{CustomOp, Graph, Init, ParamId, ParamStore, Tensor, Var};

/// Below this `|delta * P|` the zero-order-hold coefficient switches to its
/// series form.
pub const ZOH_SERIES_THRESHOLD: f64 = 1e-6;

/// Zero-order-hold pair `(exp(dt*p), (exp(dt*p) - 1) / p)`.
pub fn zoh(dt: f64, p: f64) -> (f64, f64) {
    let x = dt * p;
    let pbar = x.exp();
    let coef = if x.abs() < ZOH_SERIES_THRESHOLD {
        dt * (1.0 + 0.5 * x)
    } else {
        x.exp_m1() / p
    };
    (pbar, coef)
}

/// `d coef / d p` for the coefficient of [`zoh`].
fn zoh_coef_dp(dt: f64, p: f64, pbar: f64) -> f64 {
    let x = dt * p;
    if x.abs() < 1e-3 {
        dt * dt * (0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0)
    } else {
        (x * pbar - x.exp_m1()) / (p * p)
    }
}

/// Discretized transition and input matrices, each `[L, G, D]`.
pub fn discretize(p: &Tensor, delta: &Tensor, q: &Tensor) -> Result<(Tensor, Tensor)> {
    let (g, d) = dims2(p, "discretize")?;
    let (l, d2) = dims2(delta, "discretize")?;
    let (l2, g2) = dims2(q, "discretize")?;
    if d2 != d {
        return Err(Error::Dim { op: "discretize", axis: 1, expected: d, actual: d2 });
    }
    if l2 != l {
        return Err(Error::Dim { op: "discretize", axis: 0, expected: l, actual: l2 });
    }
    if g2 != g {
        return Err(Error::Dim { op: "discretize", axis: 1, expected: g, actual: g2 });
    }
    check_positive(delta.data())?;
    let mut pbar = Tensor::zeros([l, g, d]);
    let mut qbar = Tensor::zeros([l, g, d]);
    for t in 0..l {
        for gi in 0..g {
            for di in 0..d {
                let (a, c) = zoh(delta.data()[t * d + di], p.data()[gi * d + di]);
                let i = (t * g + gi) * d + di;
                pbar.data_mut()[i] = a;
                qbar.data_mut()[i] = c * q.data()[t * g + gi];
            }
        }
    }
    Ok((pbar, qbar))
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        &[a, b] => Ok((a, b)),
        s => Err(Error::Rank { op, expected: 2, actual: s.len() }),
    }
}

fn check_positive(delta: &[f64]) -> Result<()> {
    if let Some(v) = delta.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("step size delta must be positive, found {v}")));
    }
    Ok(())
}

/// Trainable parameters of one selective scan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SsmParams {
    /// `[G, D]`, effective matrix is `-exp(p_log)`.
    pub p_log: ParamId,
    /// `[D, D]`
    pub delta_w: ParamId,
    /// `[D]`
    pub delta_b: ParamId,
    /// `[D, G]`
    pub q_w: ParamId,
    /// `[D, G]`
    pub r_w: ParamId,
    /// `[D]`
    pub s: ParamId,
    pub state_dim: usize,
    pub channels: usize,
}

impl SsmParams {
    /// Register a parameter set under `prefix`.
    ///
    /// `P` starts at `-(g + 1)` for state row `g`, `S` at one, and the step
    /// bias so that `softplus(bias)` is log-uniform in `[1e-3, 1e-1]`.
    pub fn init(store: &mut ParamStore, init: &mut Init, prefix: &str, channels: usize, state_dim: usize) -> Result<Self> {
        if channels == 0 || state_dim == 0 {
            return Err(Error::Config("ssm channel and state dimensions must be positive".into()));
        }
        let (d, g) = (channels, state_dim);
        let p_log = Tensor::from_fn([g, d], |i| ((i / d + 1) as f64).ln());
        let delta_w = init.fan_in([d, d], d);
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        let rng = init.rng();
        let delta_b = Tensor::from_fn([d], |_| {
            let dt = rng.random_range(lo..hi).exp();
            dt + (-(-dt).exp_m1()).ln()
        });
        let q_w = init.fan_in([d, g], d);
        let r_w = init.fan_in([d, g], d);
        Ok(SsmParams {
            p_log: store.add(format!("{prefix}.p_log"), p_log)?,
            delta_w: store.add(format!("{prefix}.delta_w"), delta_w)?,
            delta_b: store.add(format!("{prefix}.delta_b"), delta_b)?,
            q_w: store.add(format!("{prefix}.q_w"), q_w)?,
            r_w: store.add(format!("{prefix}.r_w"), r_w)?,
            s: store.add(format!("{prefix}.s"), Tensor::ones([d]))?,
            state_dim,
            channels,
        })
    }

    /// Find an existing parameter set under `prefix`.
    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let id = |name: &str| {
            store
                .id(&format!("{prefix}.{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {prefix}.{name}")))
        };
        let p_log = id("p_log")?;
        let shape = store.get(p_log).shape();
        if shape.len() != 2 {
            return Err(Error::Checkpoint(format!("{prefix}.p_log must be rank 2")));
        }
        Ok(SsmParams {
            p_log,
            delta_w: id("delta_w")?,
            delta_b: id("delta_b")?,
            q_w: id("q_w")?,
            r_w: id("r_w")?,
            s: id("s")?,
            state_dim: shape[0],
            channels: shape[1],
        })
    }
}

/// Per-step quantities fed to the recurrence.
#[derive(Clone, Copy, Debug)]
pub struct ScanInputs {
    /// `[N, L, D]`
    pub w: Var,
    /// `[N, L, D]`, strictly positive.
    pub delta: Var,
    /// `[G, D]`
    pub p: Var,
    /// `[N, L, G]`
    pub q: Var,
    /// `[N, L, G]`
    pub r: Var,
    /// `[D]`
    pub s: Var,
}

struct ScanDims {
    n: usize,
    l: usize,
    g: usize,
    d: usize,
}

struct FusedScan {
    dims: ScanDims,
    /// Hidden states `z[n, t, g, d]`.
    states: Vec<f64>,
}

fn expect_shape(g: &Graph, v: Var, expected: &[usize], op: &'static str) -> Result<()> {
    let s = g.shape(v);
    if s.len() != expected.len() {
        return Err(Error::Rank { op, expected: expected.len(), actual: s.len() });
    }
    for (axis, (&e, &a)) in expected.iter().zip(s).enumerate() {
        if e != a {
            return Err(Error::Dim { op, axis, expected: e, actual: a });
        }
    }
    Ok(())
}

/// Run the recurrence on already-projected inputs.
pub fn scan_with(g: &mut Graph, x: ScanInputs) -> Result<Var> {
    const OP: &str = "selective_scan";
    let ws = g.shape(x.w).to_vec();
    if ws.len() != 3 {
        return Err(Error::Rank { op: OP, expected: 3, actual: ws.len() });
    }
    let (n, l, d) = (ws[0], ws[1], ws[2]);
    if l == 0 {
        return Err(Error::Usage("selective scan over an empty sequence".into()));
    }
    let gdim = g.shape(x.p).first().copied().unwrap_or(0);
    expect_shape(g, x.delta, &[n, l, d], OP)?;
    expect_shape(g, x.p, &[gdim, d], OP)?;
    expect_shape(g, x.q, &[n, l, gdim], OP)?;
    expect_shape(g, x.r, &[n, l, gdim], OP)?;
    expect_shape(g, x.s, &[d], OP)?;
    check_positive(g.value(x.delta).data())?;

    let (w, dt, p) = (g.value(x.w).data(), g.value(x.delta).data(), g.value(x.p).data());
    let (q, r, s) = (g.value(x.q).data(), g.value(x.r).data(), g.value(x.s).data());
    let gd = gdim * d;
    let mut states = vec![0.0; n * l * gd];
    let mut out = vec![0.0; n * l * d];
    for ni in 0..n {
        for t in 0..l {
            let row = ni * l + t;
            let (prev, cur) = states.split_at_mut(row * gd);
            let z = &mut cur[..gd];
            for gi in 0..gdim {
                let qv = q[row * gdim + gi];
                for di in 0..d {
                    let (pbar, coef) = zoh(dt[row * d + di], p[gi * d + di]);
                    let zprev = if t == 0 { 0.0 } else { prev[(row - 1) * gd + gi * d + di] };
                    z[gi * d + di] = pbar * zprev + coef * qv * w[row * d + di];
                }
            }
            for di in 0..d {
                let mut acc = s[di] * w[row * d + di];
                for gi in 0..gdim {
                    acc += r[row * gdim + gi] * z[gi * d + di];
                }
                out[row * d + di] = acc;
            }
        }
    }
    let out = Tensor::new([n, l, d], out)?;
    let op = FusedScan { dims: ScanDims { n, l, g: gdim, d }, states };
    g.custom(&[x.w, x.delta, x.p, x.q, x.r, x.s], out, Box::new(op))
}

impl CustomOp for FusedScan {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, gy: &[f64]) -> Vec<Option<Vec<f64>>> {
        let ScanDims { n, l, g: gdim, d } = self.dims;
        let gd = gdim * d;
        let (w, dt, p) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let (q, r, s) = (inputs[3].data(), inputs[4].data(), inputs[5].data());
        let z = &self.states;
        let mut gw = vec![0.0; w.len()];
        let mut gdt = vec![0.0; dt.len()];
        let mut gp = vec![0.0; p.len()];
        let mut gq = vec![0.0; q.len()];
        let mut gr = vec![0.0; r.len()];
        let mut gs = vec![0.0; d];
        let mut gz = vec![0.0; gd];
        for ni in 0..n {
            gz.fill(0.0);
            for t in (0..l).rev() {
                let row = ni * l + t;
                let zt = &z[row * gd..][..gd];
                for di in 0..d {
                    let gyv = gy[row * d + di];
                    gs[di] += gyv * w[row * d + di];
                    gw[row * d + di] += gyv * s[di];
                }
                for gi in 0..gdim {
                    let rv = r[row * gdim + gi];
                    let mut acc_r = 0.0;
                    for di in 0..d {
                        let gyv = gy[row * d + di];
                        acc_r += gyv * zt[gi * d + di];
                        gz[gi * d + di] += gyv * rv;
                    }
                    gr[row * gdim + gi] += acc_r;
                }
                for gi in 0..gdim {
                    let qv = q[row * gdim + gi];
                    let mut acc_q = 0.0;
                    for di in 0..d {
                        let k = gi * d + di;
                        let (dtv, pv, wv) = (dt[row * d + di], p[k], w[row * d + di]);
                        let (pbar, coef) = zoh(dtv, pv);
                        let zprev = if t == 0 { 0.0 } else { z[(row - 1) * gd + k] };
                        let gzv = gz[k];
                        let g_pbar = gzv * zprev;
                        let g_coef = gzv * qv * wv;
                        gdt[row * d + di] += g_pbar * pv * pbar + g_coef * pbar;
                        gp[k] += g_pbar * dtv * pbar + g_coef * zoh_coef_dp(dtv, pv, pbar);
                        acc_q += gzv * coef * wv;
                        gw[row * d + di] += gzv * coef * qv;
                        gz[k] = gzv * pbar;
                    }
                    gq[row * gdim + gi] += acc_q;
                }
            }
        }
        vec![Some(gw), Some(gdt), Some(gp), Some(gq), Some(gr), Some(gs)]
    }
}

/// Selective scan of `w: [N, L, D]` with input-dependent step, input and
/// output projections.
pub fn selective_scan(g: &mut Graph, store: &ParamStore, params: &SsmParams, w: Var) -> Result<Var> {
    let ws = g.shape(w).to_vec();
    if ws.len() != 3 {
        return Err(Error::Rank { op: "selective_scan", expected: 3, actual: ws.len() });
    }
    if ws[2] != params.channels {
        return Err(Error::Dim { op: "selective_scan", axis: 2, expected: params.channels, actual: ws[2] });
    }
    if ws[1] == 0 {
        return Err(Error::Usage("selective scan over an empty sequence".into()));
    }
    let dw = g.param(store, params.delta_w);
    let db = g.param(store, params.delta_b);
    let pre = g.linear(w, dw, Some(db))?;
    let delta = g.softplus(pre)?;
    let qw = g.param(store, params.q_w);
    let q = g.linear(w, qw, None)?;
    let rw = g.param(store, params.r_w);
    let r = g.linear(w, rw, None)?;
    let p_log = g.param(store, params.p_log);
    let p_mag = g.exp(p_log)?;
    let p = g.neg(p_mag)?;
    let s = g.param(store, params.s);
    scan_with(g, ScanInputs { w, delta, p, q, r, s })
}

/// Multi-path 2D selective scan: each path reorders the tokens of
/// `w: [N, L, D]`, scans with its own parameter set and restores the grid
/// order; the path outputs are averaged.
pub fn ss2d(g: &mut Graph, store: &ParamStore, paths: &ScanPathSet, params: &[SsmParams], w: Var) -> Result<Var> {
    if params.len() != paths.len() {
        return Err(Error::Config(format!(
            "ss2d needs one parameter set per path: {} paths, {} parameter sets",
            paths.len(),
            params.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (path, pset) in paths.paths().iter().zip(params) {
        let seq = path.apply_var(g, w, 1)?;
        let y = selective_scan(g, store, pset, seq)?;
        let y = path.unapply_var(g, y, 1)?;
        acc = Some(match acc {
            None => y,
            Some(a) => g.add(a, y)?,
        });
    }
    let sum = acc.ok_or_else(|| Error::Config("ss2d needs at least one path".into()))?;
    g.scale(sum, 1.0 / paths.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn zoh_closed_forms() {
        let (pbar, coef) = zoh(1.0, -LN_2);
        assert!((pbar - 0.5).abs() < 1e-15);
        assert!((coef - 0.5 / LN_2).abs() < 1e-15);
        assert!((coef - 0.72135).abs() < 1e-5);
        let (pbar, coef) = zoh(1.0, -1e-9);
        assert!((pbar - 1.0).abs() < 1e-8);
        assert!((coef - 1.0).abs() < 1e-8);
    }

    #[test]
    fn zoh_coef_derivative_matches_difference() {
        for &(dt, p) in &[(0.5f64, -1.0f64), (1e-3, -2e-2), (0.1, -1e-4), (2.0, -3.0)] {
            let h = 1e-3 * p.abs();
            let num = (zoh(dt, p + h).1 - zoh(dt, p - h).1) / (2.0 * h);
            let ana = zoh_coef_dp(dt, p, (dt * p).exp());
            assert!((num - ana).abs() <= 1e-6 * ana.abs().max(1e-12), "dt={dt} p={p}: {num} vs {ana}");
        }
    }

    #[test]
    fn discretize_rejects_nonpositive_step() {
        let p = Tensor::full([1, 1], -1.0);
        let q = Tensor::ones([1, 1]);
        let err = discretize(&p, &Tensor::zeros([1, 1]), &q);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn decay_lies_in_unit_interval() {
        let p = Tensor::from_fn([3, 2], |i| -0.1 - i as f64);
        let delta = Tensor::from_fn([4, 2], |i| 0.01 + 0.2 * i as f64);
        let q = Tensor::ones([4, 3]);
        let (pbar, _) = discretize(&p, &delta, &q).unwrap();
        assert!(pbar.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn init_step_range() {
        let mut store = ParamStore::new();
        let params = SsmParams::init(&mut store, &mut Init::new(3), "s", 16, 4).unwrap();
        for &b in store.get(params.delta_b).data() {
            let dt = if b > 0.0 { b + (-b).exp().ln_1p() } else { b.exp().ln_1p() };
            assert!((1e-3 - 1e-12..=1e-1 + 1e-12).contains(&dt));
        }
        assert_eq!(store.get(params.p_log).at(&[2, 5]), 3f64.ln());
        assert_eq!(SsmParams::lookup(&store, "s").unwrap(), params);
    }
}
