//! Loss terms: the dot-product discriminator, the Jensen-Shannon intra-space
//! estimator, the non-parameterized and parameterized CLUB inter-space
//! penalties, and the combined objectives.
//!
//! All terms are means over graphs, groups and pairs, so `λ` and the step
//! size do not depend on batch size or group count.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gin::Linear;
use crate::numeric::{Axis, Bindings, ParamSet, Tape, Tensor, Var};

pub fn discriminator(u: &[f64], r: &[f64]) -> Result<f64> {
    if u.len() != r.len() {
        return Err(Error::shape(
            "discriminator",
            format!("{} vs {} dims", u.len(), r.len()),
        ));
    }
    Ok(u.iter().zip(r).map(|(a, b)| a * b).sum())
}

/// Which cross-view pairs are positives.
#[derive(Debug, Clone)]
pub enum Pairing {
    /// Row `i` of view u pairs positively with row `i` of view r; every other
    /// row of view r is a negative.
    SameIndex,
    /// `B_u×B_r` indicator of positive pairs; zero entries are negatives.
    Mask(Tensor),
}

/// The two halves of the Jensen-Shannon loss.
#[derive(Debug, Clone, Copy)]
pub struct JsTerms {
    /// Mean of `SP(−D)` over positive pairs.
    pub positive: Var,
    /// Mean of `SP(D)` over negative pairs.
    pub negative: Var,
}

fn check_groups(op: &'static str, tape: &Tape, u: &[Var], r: &[Var]) -> Result<()> {
    if u.is_empty() || u.len() != r.len() {
        return Err(Error::shape(
            op,
            format!("{} groups in view u, {} in view r", u.len(), r.len()),
        ));
    }
    let (su, sr) = (tape.shape(u[0]), tape.shape(r[0]));
    if su[1] != sr[1] {
        return Err(Error::shape(op, format!("group widths {su:?} vs {sr:?}")));
    }
    for (&a, &b) in u.iter().zip(r) {
        if tape.shape(a) != su || tape.shape(b) != sr {
            return Err(Error::shape(op, "groups differ in shape"));
        }
    }
    Ok(())
}

pub fn js_mi_terms(tape: &mut Tape, u_groups: &[Var], r_groups: &[Var], pairing: &Pairing) -> Result<JsTerms> {
    check_groups("js-mi-loss", tape, u_groups, r_groups)?;
    let bu = tape.shape(u_groups[0])[0];
    let br = tape.shape(r_groups[0])[0];
    let mask = match pairing {
        Pairing::SameIndex => {
            if bu != br {
                return Err(Error::shape(
                    "js-mi-loss",
                    format!("batch sizes {bu} vs {br}"),
                ));
            }
            if bu < 2 {
                return Err(Error::Contract(
                    "js-mi-loss needs at least 2 graphs per batch for negatives".into(),
                ));
            }
            Tensor::identity(bu)
        }
        Pairing::Mask(m) => {
            if m.shape() != [bu, br] {
                return Err(Error::shape(
                    "js-mi-loss",
                    format!("mask {:?} for {bu}x{br} pairs", m.shape()),
                ));
            }
            m.clone()
        }
    };
    let n_pos = mask.data().iter().filter(|&&x| x != 0.0).count();
    let n_neg = mask.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Contract(format!(
            "js-mi-loss needs positive and negative pairs, got {n_pos} and {n_neg}"
        )));
    }
    let neg_mask = mask.map(|x| if x != 0.0 { 0.0 } else { 1.0 });
    let pos_mask = tape.constant(mask);
    let neg_mask = tape.constant(neg_mask);

    let p = u_groups.len() as f64;
    let mut pos_parts = Vec::with_capacity(u_groups.len());
    let mut neg_parts = Vec::with_capacity(u_groups.len());
    for (&u, &r) in u_groups.iter().zip(r_groups) {
        let rt = tape.transpose(r)?;
        let scores = tape.matmul(u, rt)?;
        let flipped = tape.neg(scores)?;
        let sp_pos = tape.softplus(flipped)?;
        let sp_pos = tape.mul(sp_pos, pos_mask)?;
        pos_parts.push(tape.sum(sp_pos)?);
        let sp_neg = tape.softplus(scores)?;
        let sp_neg = tape.mul(sp_neg, neg_mask)?;
        neg_parts.push(tape.sum(sp_neg)?);
    }
    let pos_total = sum_scalars(tape, &pos_parts)?;
    let neg_total = sum_scalars(tape, &neg_parts)?;
    Ok(JsTerms {
        positive: tape.scale(pos_total, 1.0 / (p * n_pos as f64))?,
        negative: tape.scale(neg_total, 1.0 / (p * n_neg as f64))?,
    })
}

fn sum_scalars(tape: &mut Tape, parts: &[Var]) -> Result<Var> {
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    let joined = tape.concat(parts, Axis::Cols)?;
    tape.sum(joined)
}

/// Negated Jensen-Shannon MI estimate between same-group embeddings of two
/// views, with in-batch negatives.
pub fn js_mi_loss(tape: &mut Tape, u_groups: &[Var], r_groups: &[Var]) -> Result<Var> {
    let t = js_mi_terms(tape, u_groups, r_groups, &Pairing::SameIndex)?;
    tape.add(t.positive, t.negative)
}

/// Inter-space penalty; `no_pairs` is set when fewer than two groups exist
/// and the value is the constant 0.
#[derive(Debug, Clone, Copy)]
pub struct Penalty {
    pub value: Var,
    pub no_pairs: bool,
}

fn zero_penalty(tape: &mut Tape) -> Penalty {
    Penalty {
        value: tape.constant(Tensor::scalar(0.0)),
        no_pairs: true,
    }
}

/// Mean over graphs and unordered group pairs `k<l` of `SP(uᵏ·uˡ)`.
pub fn interspace_penalty_nonparam(tape: &mut Tape, u_groups: &[Var]) -> Result<Penalty> {
    if u_groups.len() < 2 {
        return Ok(zero_penalty(tape));
    }
    let mut cols = Vec::new();
    for k in 0..u_groups.len() {
        for l in k + 1..u_groups.len() {
            let d = tape.row_dot(u_groups[k], u_groups[l])?;
            cols.push(tape.softplus(d)?);
        }
    }
    let all = tape.concat(&cols, Axis::Cols)?;
    Ok(Penalty {
        value: tape.mean(all)?,
        no_pairs: false,
    })
}

/// Variational network giving a Gaussian over `uˡ` conditioned on `uᵏ`:
/// a mean MLP and a log-variance MLP, each `d_V → hidden → d_V`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarNet {
    mean: [Linear; 2],
    log_var: [Linear; 2],
}

impl VarNet {
    pub fn new(prefix: &str, dim: usize, hidden: usize) -> Self {
        let mlp = |tag: &str| {
            [
                Linear::new(format!("{prefix}.{tag}0"), dim, hidden, true),
                Linear::new(format!("{prefix}.{tag}1"), hidden, dim, true),
            ]
        };
        Self {
            mean: mlp("mu"),
            log_var: mlp("logvar"),
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut impl Rng) {
        for lin in self.mean.iter().chain(&self.log_var) {
            lin.init(params, rng);
        }
    }

    pub fn dim(&self) -> usize {
        self.mean[0].d_in()
    }

    pub fn mean_layers(&self) -> &[Linear; 2] {
        &self.mean
    }

    pub fn log_var_layers(&self) -> &[Linear; 2] {
        &self.log_var
    }

    fn mlp(layers: &[Linear; 2], tape: &mut Tape, vars: &Bindings, x: Var) -> Result<Var> {
        let h = layers[0].forward(tape, vars, x)?;
        let h = tape.relu(h)?;
        layers[1].forward(tape, vars, h)
    }

    pub fn mean(&self, tape: &mut Tape, vars: &Bindings, x: Var) -> Result<Var> {
        Self::mlp(&self.mean, tape, vars, x)
    }

    pub fn log_var(&self, tape: &mut Tape, vars: &Bindings, x: Var) -> Result<Var> {
        Self::mlp(&self.log_var, tape, vars, x)
    }
}

/// Mean over graphs and ordered pairs `k≠l` of
/// `Σ_i (−lv_i − (uˡ_i − μ_i)² / e^{lv_i})`, with `μ, lv` predicted from `uᵏ`.
fn club_param_expression(
    tape: &mut Tape,
    u_groups: &[Var],
    varnet: &VarNet,
    vars: &Bindings,
) -> Result<Option<Var>> {
    if u_groups.len() < 2 {
        return Ok(None);
    }
    if let Some(&g) = u_groups.iter().find(|&&g| tape.shape(g)[1] != varnet.dim()) {
        return Err(Error::shape(
            "club-param",
            format!("group width {} but varnet dim {}", tape.shape(g)[1], varnet.dim()),
        ));
    }
    let mut cols = Vec::new();
    for (k, &uk) in u_groups.iter().enumerate() {
        let mu = varnet.mean(tape, vars, uk)?;
        let lv = varnet.log_var(tape, vars, uk)?;
        let neg_lv = tape.neg(lv)?;
        let precision = tape.exp(neg_lv)?;
        for (l, &ul) in u_groups.iter().enumerate() {
            if l == k {
                continue;
            }
            let resid = tape.sub(ul, mu)?;
            let sq = tape.square(resid)?;
            let weighted = tape.mul(sq, precision)?;
            let inner = tape.sub(neg_lv, weighted)?;
            cols.push(tape.sum_rows(inner)?);
        }
    }
    let all = tape.concat(&cols, Axis::Cols)?;
    Ok(Some(tape.mean(all)?))
}

/// Parameterized CLUB penalty minimised by the encoder. Bind the varnet
/// parameters as constants so that gradients reach the encoder only.
pub fn club_param_penalty(
    tape: &mut Tape,
    u_groups: &[Var],
    varnet: &VarNet,
    vars: &Bindings,
) -> Result<Penalty> {
    match club_param_expression(tape, u_groups, varnet, vars)? {
        Some(value) => Ok(Penalty {
            value,
            no_pairs: false,
        }),
        None => Ok(zero_penalty(tape)),
    }
}

/// Negative conditional log-likelihood (up to constants) minimised by the
/// varnet. Bind the group embeddings as constants so that gradients reach the
/// varnet only.
pub fn varnet_likelihood_loss(
    tape: &mut Tape,
    u_groups: &[Var],
    varnet: &VarNet,
    vars: &Bindings,
) -> Result<Var> {
    match club_param_expression(tape, u_groups, varnet, vars)? {
        Some(v) => tape.neg(v),
        None => Err(Error::Contract(
            "varnet likelihood needs at least two groups".into(),
        )),
    }
}

/// Values of each loss component for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub intra_positive: f64,
    pub intra_negative: f64,
    pub inter_penalty: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    /// `|total − (pos + neg + λ·inter)|`.
    pub fn identity_gap(&self) -> f64 {
        (self.total - (self.intra_positive + self.intra_negative + self.lambda * self.inter_penalty))
            .abs()
    }
}

/// Inter-space estimator used in the combined loss.
#[derive(Debug, Clone, Copy)]
pub enum InterSpace<'a> {
    NonParam,
    Param { varnet: &'a VarNet, vars: &'a Bindings },
}

pub fn total_loss(
    tape: &mut Tape,
    u_groups: &[Var],
    r_groups: &[Var],
    pairing: &Pairing,
    lambda: f64,
    inter: InterSpace<'_>,
) -> Result<(Var, LossBreakdown)> {
    if !(lambda >= 0.0) {
        return Err(Error::Contract(format!("lambda must be non-negative, got {lambda}")));
    }
    let js = js_mi_terms(tape, u_groups, r_groups, pairing)?;
    let penalty = match inter {
        InterSpace::NonParam => interspace_penalty_nonparam(tape, u_groups)?,
        InterSpace::Param { varnet, vars } => club_param_penalty(tape, u_groups, varnet, vars)?,
    };
    let intra = tape.add(js.positive, js.negative)?;
    let weighted = tape.scale(penalty.value, lambda)?;
    let total = tape.add(intra, weighted)?;
    let breakdown = LossBreakdown {
        intra_positive: tape.value(js.positive).item(),
        intra_negative: tape.value(js.negative).item(),
        inter_penalty: tape.value(penalty.value).item(),
        total: tape.value(total).item(),
        lambda,
    };
    Ok((total, breakdown))
}

pub fn total_loss_nonparam(
    tape: &mut Tape,
    u_groups: &[Var],
    r_groups: &[Var],
    lambda: f64,
) -> Result<(Var, LossBreakdown)> {
    total_loss(tape, u_groups, r_groups, &Pairing::SameIndex, lambda, InterSpace::NonParam)
}

pub fn total_loss_param(
    tape: &mut Tape,
    u_groups: &[Var],
    r_groups: &[Var],
    lambda: f64,
    varnet: &VarNet,
    varnet_vars: &Bindings,
) -> Result<(Var, LossBreakdown)> {
    total_loss(
        tape,
        u_groups,
        r_groups,
        &Pairing::SameIndex,
        lambda,
        InterSpace::Param {
            varnet,
            vars: varnet_vars,
        },
    )
}

/// Exact `log N(x | mean, β⁻¹·I)`.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], beta: f64) -> f64 {
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum();
    -0.5 * beta * sq + 0.5 * d * beta.ln() - 0.5 * d * (2.0 * PI).ln()
}

/// Dot-product form `β(uᵏ·uˡ − 1)` of the Gaussian log-density for unit
/// vectors, without its constant.
pub fn club_dot_form(u_k: &[f64], u_l: &[f64], beta: f64) -> f64 {
    let dot: f64 = u_k.iter().zip(u_l).map(|(a, b)| a * b).sum();
    beta * (dot - 1.0)
}
