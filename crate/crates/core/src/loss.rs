//! Dice and binary cross-entropy on probability maps.

use crate::config::LossConfig;
use crate::error::Result;
use crate::tensor::{Graph, Var};

/// `1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)` over all pixels.
pub fn dice_loss(g: &mut Graph, prob: Var, target: Var, eps: f64) -> Result<Var> {
    let inter = g.mul(prob, target)?;
    let inter = g.sum(inter)?;
    let num = g.scale(inter, 2.0)?;
    let num = g.add_scalar(num, eps)?;
    let sp = g.sum(prob)?;
    let st = g.sum(target)?;
    let den = g.add(sp, st)?;
    let den = g.add_scalar(den, eps)?;
    let ratio = g.div(num, den)?;
    let neg = g.neg(ratio)?;
    g.add_scalar(neg, 1.0)
}

/// Mean of `-(t ln p + (1 - t) ln(1 - p))` with `p` clamped to
/// `[clamp, 1 - clamp]`.
pub fn bce_loss(g: &mut Graph, prob: Var, target: Var, clamp: f64) -> Result<Var> {
    let p = g.clamp(prob, clamp, 1.0 - clamp)?;
    let lp = g.log(p)?;
    let q = g.neg(p)?;
    let q = g.add_scalar(q, 1.0)?;
    let lq = g.log(q)?;
    let nt = g.neg(target)?;
    let nt = g.add_scalar(nt, 1.0)?;
    let a = g.mul(target, lp)?;
    let b = g.mul(nt, lq)?;
    let s = g.add(a, b)?;
    let m = g.mean(s)?;
    g.neg(m)
}

/// Loss terms of one evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub dice: Var,
    pub bce: Var,
}

/// `alpha * dice + beta * bce`.
pub fn combined_loss(g: &mut Graph, prob: Var, target: Var, cfg: &LossConfig) -> Result<LossParts> {
    let dice = dice_loss(g, prob, target, cfg.eps)?;
    let bce = bce_loss(g, prob, target, cfg.clamp)?;
    let a = g.scale(dice, cfg.alpha)?;
    let b = g.scale(bce, cfg.beta)?;
    let total = g.add(a, b)?;
    Ok(LossParts { total, dice, bce })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn eval(prob: &[f64], target: &[f64], f: impl Fn(&mut Graph, Var, Var) -> Result<Var>) -> f64 {
        let mut g = Graph::new();
        let p = g.input(Tensor::new([prob.len()], prob.to_vec()).unwrap());
        let t = g.input(Tensor::new([target.len()], target.to_vec()).unwrap());
        let l = f(&mut g, p, t).unwrap();
        g.value(l).item()
    }

    #[test]
    fn dice_cases() {
        let d = |p: &[f64], t: &[f64]| eval(p, t, |g, p, t| dice_loss(g, p, t, 1.0));
        assert_eq!(d(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]), 0.0);
        assert_eq!(d(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((d(&[0.5, 0.5], &[1.0, 0.0]) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bce_cases() {
        let b = |p: &[f64], t: &[f64]| eval(p, t, |g, p, t| bce_loss(g, p, t, 1e-7));
        assert!((b(&[0.5; 4], &[1.0, 0.0, 1.0, 1.0]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((b(&[0.25], &[1.0]) - 1.386294).abs() < 1e-6);
        let floor = b(&[1.0, 0.0], &[1.0, 0.0]);
        assert!((floor - 1e-7).abs() < 1e-12);
    }
}
