use crate::error::{Error, Result};
use crate::nn::{bce_with_logit, sigmoid};

/// `0.5 x^2` for `|x| < 1`, else `|x| - 0.5`.
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

fn smooth_l1_4(d: &[f64; 4], t: &[f64; 4]) -> f64 {
    d.iter().zip(t).map(|(a, b)| smooth_l1(a - b)).sum()
}

/// Numerically stable two-way softmax.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let z = e[0] + e[1];
    [e[0] / z, e[1] / z]
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RpnLossTerms {
    /// `(1 / N_cls) sum L_cls`
    pub cls: f64,
    /// `lambda (1 / N_reg) sum g* L_reg`
    pub reg: f64,
}

impl RpnLossTerms {
    pub fn total(&self) -> f64 {
        self.cls + self.reg
    }
}

fn check_norms(n_cls: usize, n_reg: usize) -> Result<()> {
    if n_cls == 0 || n_reg == 0 {
        return Err(Error::InvalidConfig(format!(
            "RPN loss normalizers must be positive (N_cls = {n_cls}, N_reg = {n_reg})"
        )));
    }
    Ok(())
}

/// RPN loss from objectness probabilities `g` and labels `g_star` in {0, 1}.
/// Regression terms count only where `g_star = 1`.
pub fn rpn_loss(
    g: &[f64],
    g_star: &[f64],
    f: &[[f64; 4]],
    f_star: &[[f64; 4]],
    lambda: f64,
    n_cls: usize,
    n_reg: usize,
) -> Result<RpnLossTerms> {
    check_norms(n_cls, n_reg)?;
    let tiny = f64::MIN_POSITIVE;
    let cls: f64 = g
        .iter()
        .zip(g_star)
        .map(|(&p, &y)| -(y * p.max(tiny).ln() + (1.0 - y) * (1.0 - p).max(tiny).ln()))
        .sum();
    let reg: f64 = g_star
        .iter()
        .zip(f.iter().zip(f_star))
        .map(|(&y, (d, t))| y * smooth_l1_4(d, t))
        .sum();
    Ok(RpnLossTerms {
        cls: cls / n_cls as f64,
        reg: lambda * reg / n_reg as f64,
    })
}

/// Same loss taking objectness logits; also returns gradients w.r.t. the
/// logits and the deltas.
#[allow(clippy::type_complexity)]
pub fn rpn_loss_from_logits(
    logits: &[f64],
    g_star: &[f64],
    f: &[[f64; 4]],
    f_star: &[[f64; 4]],
    lambda: f64,
    n_cls: usize,
    n_reg: usize,
) -> Result<(RpnLossTerms, Vec<f64>, Vec<[f64; 4]>)> {
    check_norms(n_cls, n_reg)?;
    let (nc, nr) = (n_cls as f64, n_reg as f64);
    let mut cls = 0.0;
    let mut dlogits = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(g_star) {
        cls += bce_with_logit(z, y);
        dlogits.push((sigmoid(z) - y) / nc);
    }
    let mut reg = 0.0;
    let mut ddeltas = Vec::with_capacity(f.len());
    for ((d, t), &y) in f.iter().zip(f_star).zip(g_star) {
        let mut g = [0.0; 4];
        if y != 0.0 {
            reg += y * smooth_l1_4(d, t);
            for k in 0..4 {
                g[k] = lambda * y * smooth_l1_grad(d[k] - t[k]) / nr;
            }
        }
        ddeltas.push(g);
    }
    Ok((
        RpnLossTerms {
            cls: cls / nc,
            reg: lambda * reg / nr,
        },
        dlogits,
        ddeltas,
    ))
}
