//! Bi-level sparse attention.
//!
//! Queries and keys come from temporal-difference convolutions, get pooled
//! into coarse spatiotemporal regions, and a raw region-to-region score
//! matrix routes each query region to its top-k partners. Token-level
//! attention then runs only inside the routed regions, with a depthwise
//! 3x3x3 local-context term added from the unrouted values. Heads share one
//! routing table computed at full channel width.

use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::nn::{conv3d, conv_fans, pool, softmax_slice, xavier_uniform, ConvParams, LinearParams, PoolKind};
use crate::tensor::Tensor;
use crate::{Real, Result};

#[derive(Debug, Clone, Copy)]
pub struct AttentionConfig {
    pub channels: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub topk: usize,
    /// Partition coefficient: the temporal region span is `max(2^x, 2^n)`
    /// at stage depth n.
    pub partition_coefficient: u32,
    pub tdc_theta: f64,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels != self.heads * self.head_dim {
            return Err(Error::bad(
                "attention_config",
                format!("channels {} != heads {} * head_dim {}", self.channels, self.heads, self.head_dim),
            ));
        }
        if self.topk == 0 {
            return Err(Error::bad("attention_config", "topk must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.tdc_theta) {
            return Err(Error::bad("attention_config", format!("tdc_theta {} outside [0,1]", self.tdc_theta)));
        }
        Ok(())
    }
}

/// Default routed-region count: a quarter of the grid, rounded up.
pub fn default_topk(region_count: usize) -> usize {
    region_count.div_ceil(4)
}

/// Partition of a `[T, S, S']` token grid into regions. Spatial extents must
/// split evenly; the temporal tail may form one shorter region.
#[derive(Debug, Clone)]
pub struct RegionGrid {
    pub tokens: [usize; 3],
    pub window: [usize; 3],
    pub regions: [usize; 3],
    /// Flat token indices per region, row-major over (nT, nH, nW).
    pub members: Vec<Vec<usize>>,
}

impl RegionGrid {
    pub fn new(tokens: [usize; 3], window: [usize; 3]) -> Result<Self> {
        if window.iter().any(|&w| w == 0) || tokens.iter().any(|&t| t == 0) {
            return Err(Error::bad("region_grid", "zero extent"));
        }
        if tokens[1] % window[1] != 0 || tokens[2] % window[2] != 0 {
            return Err(Error::bad(
                "region_grid",
                format!("spatial tokens {}x{} not multiples of window {}x{}", tokens[1], tokens[2], window[1], window[2]),
            ));
        }
        let regions = [tokens[0].div_ceil(window[0]), tokens[1] / window[1], tokens[2] / window[2]];
        let mut members = vec![Vec::new(); regions.iter().product()];
        let mut flat = 0usize;
        for t in 0..tokens[0] {
            for y in 0..tokens[1] {
                for x in 0..tokens[2] {
                    let r = (t / window[0] * regions[1] + y / window[1]) * regions[2] + x / window[2];
                    members[r].push(flat);
                    flat += 1;
                }
            }
        }
        Ok(RegionGrid { tokens, window, regions, members })
    }

    pub fn region_count(&self) -> usize {
        self.members.len()
    }

    pub fn token_count(&self) -> usize {
        self.tokens.iter().product()
    }
}

/// Per query region, the k routed region indices in descending score order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingTable {
    pub rows: Vec<Vec<usize>>,
    pub region_count: usize,
}

impl RoutingTable {
    pub fn new(rows: Vec<Vec<usize>>, region_count: usize) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            let mut seen = vec![false; region_count];
            for &r in row {
                if r >= region_count {
                    return Err(Error::bad("routing_table", format!("row {i} routes to {r} of {region_count}")));
                }
                if seen[r] {
                    return Err(Error::bad("routing_table", format!("row {i} routes to {r} twice")));
                }
                seen[r] = true;
            }
        }
        Ok(RoutingTable { rows, region_count })
    }
}

/// Temporal-difference convolution. On top of an ordinary 3x3x3 correlation
/// the response is corrected by `-theta * x(p0) * sum(w over the t+-1 kernel
/// planes)`, which cancels temporally static content as theta approaches 1.
pub fn tdc_project<S: Real>(x: &Tensor<S>, p: &ConvParams<S>) -> Result<Tensor<S>> {
    let ws = p.weight.shape();
    if ws[2..] != [3, 3, 3] || p.stride != [1, 1, 1] || p.padding != [1, 1, 1] {
        return Err(Error::bad("tdc_project", "kernel must be 3x3x3, stride 1, pad 1"));
    }
    let mut y = conv3d(x, p)?;
    if p.theta == S::zero() {
        return Ok(y);
    }
    let (c_out, in_pg) = (ws[0], ws[1]);
    let groups = p.groups;
    let out_pg = c_out / groups;
    // per (out, in) pair: sum of kernel taps living in the temporal
    // neighbor planes kt = 0 and kt = 2
    let mut tap_sums = vec![S::zero(); c_out * in_pg];
    let wd = p.weight.data();
    for oc in 0..c_out {
        for ic in 0..in_pg {
            let base = (oc * in_pg + ic) * 27;
            let mut s = S::zero();
            for kt in [0usize, 2] {
                for sp in 0..9 {
                    s = s + wd[base + kt * 9 + sp];
                }
            }
            tap_sums[oc * in_pg + ic] = s;
        }
    }
    let voxels: usize = x.shape()[1..].iter().product();
    let xd = x.data();
    let yd = y.data_mut();
    for oc in 0..c_out {
        let g = oc / out_pg;
        for ic in 0..in_pg {
            let coeff = p.theta * tap_sums[oc * in_pg + ic];
            if coeff == S::zero() {
                continue;
            }
            let src = (g * in_pg + ic) * voxels;
            let dst = oc * voxels;
            for v in 0..voxels {
                yd[dst + v] = yd[dst + v] - coeff * xd[src + v];
            }
        }
    }
    Ok(y)
}

/// Average-pool a `[C, T_ds, S, S']` volume into its region grid. The
/// temporal window is `floor(T_ds / max(2^part, 2^n))`; spatial windows are
/// quarters of the token grid. A temporal remainder is pooled by a shorter
/// trailing window.
pub fn region_pool<S: Real>(x: &Tensor<S>, part: u32, n: u32) -> Result<(Tensor<S>, RegionGrid)> {
    if x.order() != 4 {
        return Err(Error::bad("region_pool", format!("input order {} (want [C,T,S,S'])", x.order())));
    }
    let [t_ds, s, s2] = [x.shape()[1], x.shape()[2], x.shape()[3]];
    if s < 4 || s2 < 4 || s % 4 != 0 || s2 % 4 != 0 {
        return Err(Error::bad("region_pool", format!("token grid {s}x{s2} must be a multiple of 4x4")));
    }
    let t_span = 1usize << part.max(n);
    let t_win = t_ds / t_span;
    if t_win < 1 {
        return Err(Error::bad(
            "region_pool",
            format!("clip too short at this stage: {t_ds} frames for temporal span {t_span}"),
        ));
    }
    let window = [t_win, s / 4, s2 / 4];
    let grid = RegionGrid::new([t_ds, s, s2], window)?;
    let kernel = [1, window[0], window[1], window[2]];
    let pooled = pool(x, PoolKind::Avg, &kernel, &kernel)?;
    Ok((pooled, grid))
}

/// Raw region-to-region dot products at full channel width. No softmax and
/// no scaling here.
pub fn pre_attention_scores<S: Real>(qp: &Tensor<S>, kp: &Tensor<S>) -> Result<Tensor<S>> {
    if qp.shape() != kp.shape() || qp.order() != 4 {
        return Err(Error::ShapeMismatch {
            op: "pre_attention_scores",
            expected: qp.shape().to_vec(),
            got: kp.shape().to_vec(),
        });
    }
    let c = qp.shape()[0];
    let r: usize = qp.shape()[1..].iter().product();
    let q = qp.data();
    let k = kp.data();
    let mut out = Tensor::zeros(&[r, r])?;
    let od = out.data_mut();
    for i in 0..r {
        for j in 0..r {
            let mut acc = S::zero();
            for ch in 0..c {
                acc = acc + q[ch * r + i] * k[ch * r + j];
            }
            od[i * r + j] = acc;
        }
    }
    Ok(out)
}

/// Top-k region indices per row, descending score, ties to the lower index.
pub fn topk_route<S: Real>(scores: &Tensor<S>, k: usize) -> Result<RoutingTable> {
    if scores.order() != 2 || scores.shape()[0] != scores.shape()[1] {
        return Err(Error::bad("topk_route", format!("want square score matrix, got {:?}", scores.shape())));
    }
    let r = scores.shape()[0];
    if k == 0 || k > r {
        return Err(Error::bad("topk_route", format!("k {k} outside 1..={r}")));
    }
    if scores.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::degenerate("topk_route", "non-finite score"));
    }
    let d = scores.data();
    let mut rows = Vec::with_capacity(r);
    for i in 0..r {
        let row = &d[i * r..(i + 1) * r];
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        order.truncate(k);
        rows.push(order);
    }
    RoutingTable::new(rows, r)
}

/// Per-head attention restricted to each query region's routed regions,
/// plus a depthwise 3x3x3 context term over the full value volume.
///
/// `rows`, when given, receives one weight row per query token (indexed by
/// flat token position, weights in gather order).
pub fn refined_attention<S: Real>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    routes: &RoutingTable,
    grid: &RegionGrid,
    lce: &ConvParams<S>,
) -> Result<Tensor<S>> {
    refined_attention_rows(q, k, v, routes, grid, lce, None)
}

pub fn refined_attention_rows<S: Real>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    routes: &RoutingTable,
    grid: &RegionGrid,
    lce: &ConvParams<S>,
    mut rows: Option<&mut Vec<Vec<S>>>,
) -> Result<Tensor<S>> {
    if q.shape() != k.shape() || q.shape() != v.shape() {
        return Err(Error::ShapeMismatch { op: "refined_attention", expected: q.shape().to_vec(), got: v.shape().to_vec() });
    }
    if q.shape()[1..] != grid.tokens {
        return Err(Error::bad(
            "refined_attention",
            format!("token volume {:?} does not match grid {:?}", &q.shape()[1..], grid.tokens),
        ));
    }
    if routes.region_count != grid.region_count() || routes.rows.len() != grid.region_count() {
        return Err(Error::bad("refined_attention", "routing table does not match region grid"));
    }
    let d = q.shape()[0];
    let lw = lce.weight.shape();
    if lce.groups != d || lw[0] != d || lw[1] != 1 || lw[2..] != [3, 3, 3] {
        return Err(Error::bad("refined_attention", "context conv must be depthwise 3x3x3"));
    }

    let mut out = conv3d(v, lce)?;
    let n = grid.token_count();
    let scale = S::one() / S::of(d as f64).sqrt();
    let qd = q.data();
    let kd = k.data();
    let vd = v.data();
    if let Some(r) = rows.as_deref_mut() {
        r.clear();
        r.resize(n, Vec::new());
    }

    let mut weights: Vec<S> = Vec::new();
    for (region, tokens) in grid.members.iter().enumerate() {
        let gathered: Vec<usize> =
            routes.rows[region].iter().flat_map(|&r| grid.members[r].iter().copied()).collect();
        for &i in tokens {
            weights.clear();
            for &j in &gathered {
                let mut acc = S::zero();
                for c in 0..d {
                    acc = acc + qd[c * n + i] * kd[c * n + j];
                }
                weights.push(acc * scale);
            }
            softmax_slice(&mut weights);
            for c in 0..d {
                let mut acc = S::zero();
                for (w, &j) in weights.iter().zip(&gathered) {
                    acc = acc + *w * vd[c * n + j];
                }
                let slot = c * n + i;
                out.data_mut()[slot] = out.data_mut()[slot] + acc;
            }
            if let Some(r) = rows.as_deref_mut() {
                r[i] = weights.clone();
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MhsaParams<S> {
    pub q_proj: ConvParams<S>,
    pub k_proj: ConvParams<S>,
    pub v_proj: ConvParams<S>,
    pub lce: ConvParams<S>,
    pub out_proj: LinearParams<S>,
}

impl<S: Real> MhsaParams<S> {
    pub fn init(cfg: &AttentionConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let mk = |sh: &[usize], stride, padding, groups: usize, rng: &mut ChaCha8Rng| -> Result<ConvParams<S>> {
            let (fi, fo) = conv_fans(sh);
            Ok(ConvParams::new(xavier_uniform(sh, fi, fo, rng)?, vec![S::zero(); sh[0]], stride, padding)
                .with_groups(groups))
        };
        Ok(MhsaParams {
            q_proj: mk(&[c, c, 3, 3, 3], [1, 1, 1], [1, 1, 1], 1, rng)?.with_theta(S::of(cfg.tdc_theta)),
            k_proj: mk(&[c, c, 3, 3, 3], [1, 1, 1], [1, 1, 1], 1, rng)?.with_theta(S::of(cfg.tdc_theta)),
            v_proj: mk(&[c, c, 1, 1, 1], [1, 1, 1], [0, 0, 0], 1, rng)?,
            lce: mk(&[c, 1, 3, 3, 3], [1, 1, 1], [1, 1, 1], c, rng)?,
            out_proj: LinearParams {
                weight: xavier_uniform(&[c, c], c, c, rng)?,
                bias: vec![S::zero(); c],
            },
        })
    }

    /// Channel slice of the depthwise context conv for one head.
    fn lce_head(&self, from: usize, count: usize) -> Result<ConvParams<S>> {
        Ok(ConvParams::new(
            self.lce.weight.slice_axis0(from, count)?,
            self.lce.bias[from..from + count].to_vec(),
            self.lce.stride,
            self.lce.padding,
        )
        .with_groups(count))
    }
}

/// Optional capture of the routing internals for inspection and export.
#[derive(Debug)]
pub struct MhsaTrace<S> {
    pub pre_scores: Option<Tensor<S>>,
    pub routes: Option<RoutingTable>,
    pub grid: Option<RegionGrid>,
    /// Per head, per flat token index: softmax weights in gather order.
    pub refined_rows: Vec<Vec<Vec<S>>>,
}

impl<S> Default for MhsaTrace<S> {
    fn default() -> Self {
        MhsaTrace { pre_scores: None, routes: None, grid: None, refined_rows: Vec::new() }
    }
}

pub fn mhsa_forward<S: Real>(
    x: &Tensor<S>,
    cfg: &AttentionConfig,
    params: &MhsaParams<S>,
    stage_n: u32,
) -> Result<Tensor<S>> {
    mhsa_forward_traced(x, cfg, params, stage_n, None)
}

pub fn mhsa_forward_traced<S: Real>(
    x: &Tensor<S>,
    cfg: &AttentionConfig,
    params: &MhsaParams<S>,
    stage_n: u32,
    mut trace: Option<&mut MhsaTrace<S>>,
) -> Result<Tensor<S>> {
    cfg.validate()?;
    if x.order() != 4 || x.shape()[0] != cfg.channels {
        return Err(Error::bad(
            "mhsa_forward",
            format!("input {:?} does not carry {} channels", x.shape(), cfg.channels),
        ));
    }
    let q = tdc_project(x, &params.q_proj)?;
    let k = tdc_project(x, &params.k_proj)?;
    let v = conv3d(x, &params.v_proj)?;

    let (qp, grid) = region_pool(&q, cfg.partition_coefficient, stage_n)?;
    let (kp, _) = region_pool(&k, cfg.partition_coefficient, stage_n)?;
    let scores = pre_attention_scores(&qp, &kp)?;
    let routes = topk_route(&scores, cfg.topk)?;

    let mut heads = Vec::with_capacity(cfg.heads);
    let mut head_rows: Vec<Vec<Vec<S>>> = Vec::new();
    for h in 0..cfg.heads {
        let from = h * cfg.head_dim;
        let qh = q.slice_axis0(from, cfg.head_dim)?;
        let kh = k.slice_axis0(from, cfg.head_dim)?;
        let vh = v.slice_axis0(from, cfg.head_dim)?;
        let lce_h = params.lce_head(from, cfg.head_dim)?;
        if trace.is_some() {
            let mut rows = Vec::new();
            heads.push(refined_attention_rows(&qh, &kh, &vh, &routes, &grid, &lce_h, Some(&mut rows))?);
            head_rows.push(rows);
        } else {
            heads.push(refined_attention(&qh, &kh, &vh, &routes, &grid, &lce_h)?);
        }
    }
    let refs: Vec<&Tensor<S>> = heads.iter().collect();
    let cat = Tensor::concat_axis0(&refs)?;

    if let Some(t) = trace.as_deref_mut() {
        t.pre_scores = Some(scores);
        t.routes = Some(routes.clone());
        t.grid = Some(grid.clone());
        t.refined_rows = head_rows;
    }

    // token-wise output projection by the (h*d)x(h*d) matrix
    let c = cfg.channels;
    let n: usize = x.shape()[1..].iter().product();
    let w = params.out_proj.weight.data();
    if params.out_proj.weight.shape() != [c, c] || params.out_proj.bias.len() != c {
        return Err(Error::bad("mhsa_forward", "output projection must be CxC"));
    }
    let cd = cat.data();
    let mut out = Tensor::zeros(x.shape())?;
    let od = out.data_mut();
    for co in 0..c {
        for ci in 0..c {
            let wv = w[co * c + ci];
            if wv == S::zero() {
                continue;
            }
            let src = ci * n;
            let dst = co * n;
            for i in 0..n {
                od[dst + i] = od[dst + i] + wv * cd[src + i];
            }
        }
        let b = params.out_proj.bias[co];
        if b != S::zero() {
            for i in 0..n {
                od[co * n + i] = od[co * n + i] + b;
            }
        }
    }
    Ok(out)
}
