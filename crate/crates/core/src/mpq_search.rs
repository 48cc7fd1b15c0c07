//! Group-wise channel bit allocation.
//!
//! Channels are ranked by weight kurtosis, split into `g` contiguous groups,
//! and each group is assigned `n − 1`, `n` or `n + 1` bits so that the total
//! equals `C · n`. The assignment minimizing the activation-aware output error
//! `‖X Wᵀ − Q(X̂) Q(Ŵ)ᵀ‖²` is found by exhaustive enumeration.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numkit::{kurtosis_checked, matmul_nt, Tensor2D};
use crate::quantizer::{
    calibrate_uniform, compute_prescale, fit_residual, fit_uniform, quantize_columns, quantize_uniform, ChannelQuantizer,
    ChannelScaling, Granularity, OptMode,
};

/// Largest group count the exhaustive search accepts (`3^g` leaves).
pub const MAX_GROUPS: usize = 16;
const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGroup {
    pub members: Vec<usize>,
    /// Mean kurtosis of the members.
    pub kurtosis: f64,
    pub bits: u8,
    /// `None` for the plain `n − 1` tier.
    pub mode: Option<OptMode>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub base_bits: u8,
    pub groups: usize,
    /// Fraction of channels upgraded one extra tier after the search.
    pub surplus: f64,
    pub act_bits: u8,
}

impl SearchConfig {
    pub fn new(base_bits: u8, channels: usize) -> Self {
        Self { base_bits, groups: default_groups(channels), surplus: 0.0, act_bits: 8 }
    }
}

pub fn default_groups(channels: usize) -> usize {
    (channels / 10).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub bits: Vec<u8>,
    pub modes: Vec<Option<OptMode>>,
    pub specs: Vec<ChannelQuantizer>,
    pub groups: Vec<ChannelGroup>,
    pub scaling: ChannelScaling,
    /// Channels upgraded by the surplus step, in upgrade order.
    pub surplus_channels: Vec<usize>,
    pub objective: f64,
    /// Objective of the all-`n` allocation.
    pub baseline: f64,
}

impl AllocationResult {
    pub fn total_bits(&self) -> u64 {
        self.bits.iter().map(|b| *b as u64).sum()
    }

    /// Counts of channels at `n − 1`, `n`, `n + 1` (and beyond via surplus).
    pub fn bit_histogram(&self) -> std::collections::BTreeMap<u8, usize> {
        let mut h = std::collections::BTreeMap::new();
        for b in &self.bits {
            *h.entry(*b).or_insert(0) += 1;
        }
        h
    }
}

/// `(channel, κ)` over the columns of `w`, sorted by descending kurtosis with
/// ties broken by channel index. Degenerate channels score 0.
pub fn rank_channels(w: &Tensor2D) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = (0..w.cols()).map(|j| (j, kurtosis_checked(&w.column(j)).value)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Balanced contiguous split of a ranked list: the first `C mod g` groups
/// get one extra member.
pub fn partition_groups(ranked: &[(usize, f64)], g: usize) -> Result<Vec<ChannelGroup>> {
    let c = ranked.len();
    if g == 0 || g > c {
        return Err(Error::InvalidArgument(format!("group count {g} outside [1, {c}]")));
    }
    let (q, r) = (c / g, c % g);
    let mut start = 0;
    Ok((0..g)
        .map(|i| {
            let len = q + (i < r) as usize;
            let slice = &ranked[start..start + len];
            start += len;
            ChannelGroup {
                members: slice.iter().map(|(j, _)| *j).collect(),
                kurtosis: slice.iter().map(|(_, k)| k).sum::<f64>() / len as f64,
                bits: 0,
                mode: None,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeChoice {
    pub mode: OptMode,
    pub joint_error: f64,
    pub separate_error: f64,
}

/// Relative tolerance, against `‖X Wᵀ‖²`, below which the two modes tie.
pub const MODE_TIE_RTOL: f64 = 1e-12;

/// Picks the residual strategy with the smaller output error on one group;
/// ties go to joint.
///
/// `w_group` is (out × |G|) and `x_group`/`xq_group` are the matching
/// (batch × |G|) full-precision and quantized activations.
pub fn select_op_mode(
    w_group: &Tensor2D,
    x_group: &Tensor2D,
    xq_group: &Tensor2D,
    joint: &[ChannelQuantizer],
    separate: &[ChannelQuantizer],
) -> Result<ModeChoice> {
    let target = matmul_nt(x_group, w_group)?;
    let err = |specs: &[ChannelQuantizer]| -> Result<f64> {
        let qw = quantize_columns(w_group, specs)?;
        Ok(target.sub(&matmul_nt(xq_group, &qw)?)?.sum_squares())
    };
    let (joint_error, separate_error) = (err(joint)?, err(separate)?);
    // errors within rounding noise of the target energy count as a tie
    let tie = MODE_TIE_RTOL * target.sum_squares();
    let mode = if separate_error < joint_error - tie { OptMode::Separate } else { OptMode::Joint };
    Ok(ModeChoice { mode, joint_error, separate_error })
}

/// Fitted quantizer for one channel at tier `t ∈ {−1, 0, +1}` relative to `n`.
pub fn fit_channel(col: &[f64], base_bits: u8, tier: i8, mode: OptMode) -> Result<ChannelQuantizer> {
    let low = base_bits - 1;
    match tier {
        -1 => Ok(ChannelQuantizer::Uniform(fit_uniform(col, low)?)),
        0 | 1 => {
            let tiers = (tier + 1) as u8;
            ChannelQuantizer::residual(fit_residual(col, low, tiers, mode)?, tiers)
        }
        _ => Err(Error::InvalidArgument(format!("tier {tier} not in {{-1, 0, 1}}"))),
    }
}

/// Pre-scaled operands and per-channel candidate quantizers shared by the
/// search and its checks.
pub struct SearchProblem {
    pub scaling: ChannelScaling,
    pub w_hat: Tensor2D,
    pub x_hat: Tensor2D,
    pub xq: Tensor2D,
    /// `X Wᵀ`.
    pub target: Tensor2D,
    pub groups: Vec<ChannelGroup>,
    /// `[channel][tier + 1][mode]` with mode 0 joint, 1 separate; the
    /// `n − 1` tier stores the same uniform quantizer twice.
    candidates: Vec<[[ChannelQuantizer; 2]; 3]>,
    /// `[group][tier + 1]`; `None` at the `n − 1` tier.
    group_modes: Vec<[Option<OptMode>; 3]>,
    base_bits: u8,
}

impl SearchProblem {
    pub fn new(w: &Tensor2D, x_calib: &Tensor2D, cfg: &SearchConfig) -> Result<Self> {
        if cfg.base_bits < 2 {
            return Err(Error::Config(format!("base bits n = {} must be at least 2", cfg.base_bits)));
        }
        if x_calib.rows() == 0 {
            return Err(Error::InvalidArgument("no calibration activations".into()));
        }
        let scaling = compute_prescale(w, x_calib)?;
        let w_hat = scaling.scale_weights(w)?;
        let x_hat = scaling.scale_activations(x_calib)?;
        let act = calibrate_uniform(&x_hat, cfg.act_bits, Granularity::PerTensor)?;
        let xq = quantize_uniform(&x_hat, &act[0]);
        let target = matmul_nt(x_calib, w)?;
        let groups = partition_groups(&rank_channels(&w_hat), cfg.groups)?;
        let n = cfg.base_bits;
        let candidates = (0..w_hat.cols())
            .into_par_iter()
            .map(|j| -> Result<[[ChannelQuantizer; 2]; 3]> {
                let col = w_hat.column(j);
                let low = fit_channel(&col, n, -1, OptMode::Joint)?;
                let mut out = [[low; 2]; 3];
                for tier in [0i8, 1] {
                    for (m, mode) in [OptMode::Joint, OptMode::Separate].into_iter().enumerate() {
                        out[(tier + 1) as usize][m] = fit_channel(&col, n, tier, mode)?;
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut problem =
            Self { scaling, w_hat, x_hat, xq, target, groups, candidates, group_modes: vec![], base_bits: n };
        problem.group_modes = (0..problem.groups.len())
            .map(|gi| -> Result<[Option<OptMode>; 3]> {
                let members = &problem.groups[gi].members;
                let wg = problem.w_hat.select_cols(members);
                let xg = problem.x_hat.select_cols(members);
                let xqg = problem.xq.select_cols(members);
                let mut modes = [None; 3];
                for t in 1..3 {
                    let joint: Vec<_> = members.iter().map(|j| problem.candidates[*j][t][0]).collect();
                    let sep: Vec<_> = members.iter().map(|j| problem.candidates[*j][t][1]).collect();
                    modes[t] = Some(select_op_mode(&wg, &xg, &xqg, &joint, &sep)?.mode);
                }
                Ok(modes)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(problem)
    }

    pub fn channels(&self) -> usize {
        self.w_hat.cols()
    }

    /// Quantizer a channel in group `gi` receives at `tier`.
    pub fn spec(&self, channel: usize, gi: usize, tier: i8) -> ChannelQuantizer {
        let t = (tier + 1) as usize;
        let m = match self.group_modes[gi][t] {
            Some(OptMode::Separate) => 1,
            _ => 0,
        };
        self.candidates[channel][t][m]
    }

    pub fn group_mode(&self, gi: usize, tier: i8) -> Option<OptMode> {
        self.group_modes[gi][(tier + 1) as usize]
    }

    /// Per-channel quantizers for a group-level tier assignment.
    pub fn specs_for(&self, group_tiers: &[i8]) -> Vec<ChannelQuantizer> {
        let mut specs = vec![self.candidates[0][0][0]; self.channels()];
        for (gi, g) in self.groups.iter().enumerate() {
            for j in &g.members {
                specs[*j] = self.spec(*j, gi, group_tiers[gi]);
            }
        }
        specs
    }

    /// `‖X Wᵀ − Q(X̂) Q(Ŵ)ᵀ‖²` evaluated directly.
    pub fn objective(&self, specs: &[ChannelQuantizer]) -> Result<f64> {
        let qw = quantize_columns(&self.w_hat, specs)?;
        Ok(self.target.sub(&matmul_nt(&self.xq, &qw)?)?.sum_squares())
    }

    pub fn is_feasible(&self, group_tiers: &[i8]) -> bool {
        group_tiers.iter().zip(&self.groups).map(|(t, g)| *t as i64 * g.members.len() as i64).sum::<i64>() == 0
    }
}

/// Exhaustive search over group tier assignments with `Σ cᵢ = C · n`,
/// followed by the optional surplus upgrade.
pub fn search_allocation(w: &Tensor2D, x_calib: &Tensor2D, cfg: &SearchConfig) -> Result<AllocationResult> {
    if cfg.groups > MAX_GROUPS {
        return Err(Error::Config(format!(
            "{} groups exceed the exhaustive search limit of {MAX_GROUPS}",
            cfg.groups
        )));
    }
    if !(0.0..=1.0).contains(&cfg.surplus) {
        return Err(Error::Config(format!("surplus fraction {} outside [0, 1]", cfg.surplus)));
    }
    let p = SearchProblem::new(w, x_calib, cfg)?;
    let tiers = enumerate(&p)?;
    let mut specs = p.specs_for(&tiers);
    let baseline = p.objective(&p.specs_for(&vec![0; p.groups.len()]))?;

    let n = p.base_bits;
    let mut bits: Vec<u8> = specs.iter().map(ChannelQuantizer::bits).collect();
    let mut modes: Vec<Option<OptMode>> = specs.iter().map(ChannelQuantizer::mode).collect();
    let group_of: Vec<usize> = {
        let mut g = vec![0; p.channels()];
        for (gi, grp) in p.groups.iter().enumerate() {
            for j in &grp.members {
                g[*j] = gi;
            }
        }
        g
    };
    let ranked = rank_channels(&p.w_hat);
    let extra = (cfg.surplus * p.channels() as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut surplus_channels = Vec::with_capacity(extra);
    for _ in 0..extra {
        let lowest = bits.iter().filter(|b| **b <= n).min().copied();
        let Some(lowest) = lowest else { break };
        let (j, _) = *ranked.iter().find(|(j, _)| bits[*j] == lowest).expect("lowest tier is populated");
        let tier = (lowest as i8 - n as i8) + 1;
        specs[j] = p.spec(j, group_of[j], tier);
        bits[j] = specs[j].bits();
        modes[j] = specs[j].mode();
        surplus_channels.push(j);
    }

    let objective = p.objective(&specs)?;
    let groups = p
        .groups
        .iter()
        .enumerate()
        .map(|(gi, g)| ChannelGroup {
            bits: (n as i8 + tiers[gi]) as u8,
            mode: p.group_mode(gi, tiers[gi]),
            ..g.clone()
        })
        .collect();
    Ok(AllocationResult { bits, modes, specs, groups, scaling: p.scaling, surplus_channels, objective, baseline })
}

/// Gram-matrix form of the objective: with `A = X Wᵀ − Q(X̂) Ŵᵀ` and
/// `R_{G,t} = Q(X̂)_G (Ŵ_G − Q_t(Ŵ_G))ᵀ`, the objective of an assignment is
/// `‖A + Σ_G R_{G,t_G}‖²`.
fn enumerate(p: &SearchProblem) -> Result<Vec<i8>> {
    let g = p.groups.len();
    let a = p.target.sub(&matmul_nt(&p.xq, &p.w_hat)?)?;
    let mut r: Vec<Tensor2D> = Vec::with_capacity(3 * g);
    for (gi, grp) in p.groups.iter().enumerate() {
        let wg = p.w_hat.select_cols(&grp.members);
        let xqg = p.xq.select_cols(&grp.members);
        for tier in -1i8..=1 {
            let specs: Vec<_> = grp.members.iter().map(|j| p.spec(*j, gi, tier)).collect();
            let e = wg.sub(&quantize_columns(&wg, &specs)?)?;
            r.push(matmul_nt(&xqg, &e)?);
        }
    }
    let ip = |x: &Tensor2D, y: &Tensor2D| x.data().iter().zip(y.data()).map(|(u, v)| u * v).sum::<f64>();
    let m = r.len();
    let gram: Vec<f64> = (0..m * m).into_par_iter().map(|k| ip(&r[k / m], &r[k % m])).collect();
    let lin: Vec<f64> = r.iter().map(|ri| 2.0 * ip(&a, ri)).collect();
    let sizes: Vec<i64> = p.groups.iter().map(|g| g.members.len() as i64).collect();
    let mut remaining = vec![0i64; g + 1];
    for i in (0..g).rev() {
        remaining[i] = remaining[i + 1] + sizes[i];
    }

    let idx = |gi: usize, t: i8| 3 * gi + (t + 1) as usize;
    let eval = |tiers: &[i8]| -> f64 {
        let mut v = 0.0;
        for (i, ti) in tiers.iter().enumerate() {
            let a_i = idx(i, *ti);
            v += lin[a_i] + gram[a_i * m + a_i];
            for (j, tj) in tiers.iter().enumerate().take(i) {
                v += 2.0 * gram[a_i * m + idx(j, *tj)];
            }
        }
        v
    };
    let uniform = vec![0i8; g];
    let mut best = (eval(&uniform), uniform);

    struct Dfs<'a> {
        sizes: &'a [i64],
        remaining: &'a [i64],
        gram: &'a [f64],
        lin: &'a [f64],
        m: usize,
        best: &'a mut (f64, Vec<i8>),
        path: Vec<i8>,
    }
    fn go(d: &mut Dfs, depth: usize, budget: i64, value: f64) {
        if depth == d.sizes.len() {
            if budget == 0 && value < d.best.0 - TIE_RTOL * d.best.0.abs() {
                *d.best = (value, d.path.clone());
            }
            return;
        }
        for t in -1i8..=1 {
            let b = budget + t as i64 * d.sizes[depth];
            if b.abs() > d.remaining[depth + 1] {
                continue;
            }
            let a = 3 * depth + (t + 1) as usize;
            let mut v = value + d.lin[a] + d.gram[a * d.m + a];
            for (j, tj) in d.path.iter().enumerate() {
                v += 2.0 * d.gram[a * d.m + 3 * j + (*tj + 1) as usize];
            }
            d.path.push(t);
            go(d, depth + 1, b, v);
            d.path.pop();
        }
    }
    let mut dfs = Dfs { sizes: &sizes, remaining: &remaining, gram: &gram, lin: &lin, m, best: &mut best, path: vec![] };
    go(&mut dfs, 0, 0, 0.0);
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{kurtosis, SeedStream};

    fn layer(seed: u64, out: usize, c: usize, batch: usize) -> (Tensor2D, Tensor2D) {
        let mut rng = SeedStream::new(seed).fork(0);
        (rng.normal_tensor(out, c), rng.normal_tensor(batch, c))
    }

    #[test]
    fn spike_channel_ranks_first() {
        let (mut w, _) = layer(71, 40, 6, 1);
        w.set(7, 3, 25.0);
        let ranked = rank_channels(&w);
        assert_eq!(ranked[0].0, 3);
        for (j, k) in &ranked {
            assert_eq!(*k, kurtosis(&w.column(*j)));
        }
    }

    #[test]
    fn identical_channels_keep_index_order() {
        let col: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let w = Tensor2D::from_fn(12, 5, |i, _| col[i]);
        let order: Vec<usize> = rank_channels(&w).iter().map(|r| r.0).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn balanced_partitions() {
        let ranked: Vec<(usize, f64)> = (0..23).map(|i| (i, 0.0)).collect();
        let sizes: Vec<usize> = partition_groups(&ranked, 5).unwrap().iter().map(|g| g.members.len()).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        let ten = &ranked[..10];
        assert!(partition_groups(ten, 10).unwrap().iter().all(|g| g.members.len() == 1));
        assert_eq!(partition_groups(ten, 1).unwrap()[0].members.len(), 10);
        assert!(partition_groups(ten, 0).is_err());
        assert!(partition_groups(ten, 11).is_err());
    }

    #[test]
    fn budget_and_dominance() {
        for seed in 0..4 {
            let (w, x) = layer(100 + seed, 8, 20, 32);
            let mut cfg = SearchConfig::new(3, 20);
            cfg.groups = 4;
            let res = search_allocation(&w, &x, &cfg).unwrap();
            assert_eq!(res.total_bits(), 60);
            assert!(res.objective <= res.baseline * (1.0 + 1e-9));
            assert!(res.bits.iter().all(|b| (2..=4).contains(b)));
        }
    }

    #[test]
    fn surplus_upgrades_ceil_fraction() {
        let (w, x) = layer(77, 8, 21, 16);
        let mut cfg = SearchConfig::new(2, 21);
        cfg.groups = 3;
        cfg.surplus = 0.1;
        let res = search_allocation(&w, &x, &cfg).unwrap();
        assert_eq!(res.surplus_channels.len(), 3);
        assert_eq!(res.total_bits(), 21 * 2 + 3);
    }

    #[test]
    fn search_is_deterministic() {
        let (w, x) = layer(78, 6, 12, 16);
        let cfg = SearchConfig { groups: 3, ..SearchConfig::new(3, 12) };
        assert_eq!(search_allocation(&w, &x, &cfg).unwrap(), search_allocation(&w, &x, &cfg).unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        let (w, x) = layer(79, 4, 4, 4);
        assert!(search_allocation(&w, &x, &SearchConfig::new(1, 4)).is_err());
        let cfg = SearchConfig { groups: 5, ..SearchConfig::new(2, 4) };
        assert!(search_allocation(&w, &x, &cfg).is_err());
    }
}
