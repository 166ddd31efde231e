//! Cross-channel fusion attention.
//!
//! Three variants over a `[T, C, D]` feature tensor:
//!
//! * MFCCA — per time step, each channel queries the channels of the
//!   `2F+1` neighbouring frames (context radius `F`, zero-padded edges).
//! * CLCCA — MFCCA with `F = 0`: per-frame attention across channels.
//! * FLCCA — temporal attention with channel-averaged keys/values and
//!   per-channel queries.
//!
//! Single-head forwards come with analytic gradients of
//! `<upstream, forward(x)>` for numerical verification; multi-head
//! combination is concat-then-project.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{FeatureTensor, TensorFile};

/// Fusion variant selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Mfcca,
    Clcca,
    Flcca,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Mfcca => "mfcca",
            Variant::Clcca => "clcca",
            Variant::Flcca => "flcca",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mfcca" => Ok(Variant::Mfcca),
            "clcca" => Ok(Variant::Clcca),
            "flcca" => Ok(Variant::Flcca),
            other => Err(Error::invalid(format!("unknown attention variant {other:?}"))),
        }
    }
}

/// Attention hyperparameters. `context_radius` is the number of context
/// frames `F` on each side; CLCCA forces `F = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub variant: Variant,
    pub context_radius: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttentionConfig {
    pub fn new(variant: Variant, context_radius: usize, heads: usize, head_dim: usize) -> Result<Self> {
        if heads == 0 || head_dim == 0 {
            return Err(Error::invalid("heads and head_dim must be positive"));
        }
        if variant == Variant::Clcca && context_radius != 0 {
            return Err(Error::invalid("CLCCA requires context radius 0"));
        }
        Ok(Self { variant, context_radius, heads, head_dim })
    }

    /// Keys visible to one query: `(2F+1)·C` for MFCCA/CLCCA, `T` for FLCCA.
    pub fn keys_per_query(&self, t: usize, c: usize) -> usize {
        match self.variant {
            Variant::Mfcca | Variant::Clcca => (2 * self.context_radius + 1) * c,
            Variant::Flcca => t,
        }
    }
}

/// Context-expanded features `[T, (2F+1)·C, D]`. The row block for time `t`
/// stacks frames `t-F ..= t+F` along the channel axis; frames outside
/// `[0, T)` contribute all-zero blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTensor {
    data: Array3<f64>,
    radius: usize,
    source_channels: usize,
}

impl ContextTensor {
    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn source_channels(&self) -> usize {
        self.source_channels
    }
}

/// Projection parameters for one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bq: Array1<f64>,
    pub bk: Array1<f64>,
    pub bv: Array1<f64>,
}

impl HeadParams {
    pub fn new(
        wq: Array2<f64>,
        wk: Array2<f64>,
        wv: Array2<f64>,
        bq: Array1<f64>,
        bk: Array1<f64>,
        bv: Array1<f64>,
    ) -> Result<Self> {
        let (d_in, d_head) = wq.dim();
        for (name, w) in [("wk", &wk), ("wv", &wv)] {
            if w.dim() != (d_in, d_head) {
                return Err(Error::invalid(format!(
                    "{name} shape {:?} does not match wq shape {:?}",
                    w.dim(),
                    (d_in, d_head)
                )));
            }
        }
        for (name, b) in [("bq", &bq), ("bk", &bk), ("bv", &bv)] {
            if b.len() != d_head {
                return Err(Error::invalid(format!(
                    "{name} length {} does not match head dim {d_head}",
                    b.len()
                )));
            }
        }
        let finite = wq.iter().chain(&wk).chain(&wv).chain(&bq).chain(&bk).chain(&bv).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("head parameters contain non-finite entries"));
        }
        Ok(Self { wq, wk, wv, bq, bk, bv })
    }

    pub fn input_dim(&self) -> usize {
        self.wq.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.wq.ncols()
    }

    pub fn random(rng: &mut impl Rng, d_in: usize, d_head: usize, scale: f64) -> Self {
        let mut mat = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.random_range(-scale..scale));
        let wq = mat(d_in, d_head);
        let wk = mat(d_in, d_head);
        let wv = mat(d_in, d_head);
        let mut vec = |n: usize| Array1::from_shape_fn(n, |_| rng.random_range(-scale..scale));
        Self { wq, wk, wv, bq: vec(d_head), bk: vec(d_head), bv: vec(d_head) }
    }
}

/// Parameters for a full multi-head layer: per-head projections plus the
/// `[h·D_head, D_out]` output projection applied to the concatenated heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadParams {
    heads: Vec<HeadParams>,
    wo: Array2<f64>,
}

impl MultiHeadParams {
    pub fn new(heads: Vec<HeadParams>, wo: Array2<f64>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::invalid("at least one head is required"));
        }
        let d_in = heads[0].input_dim();
        let d_head = heads[0].head_dim();
        if heads.iter().any(|h| h.input_dim() != d_in || h.head_dim() != d_head) {
            return Err(Error::invalid("all heads must share input and head dimensions"));
        }
        if wo.nrows() != heads.len() * d_head {
            return Err(Error::invalid(format!(
                "wo has {} rows, expected heads*head_dim = {}",
                wo.nrows(),
                heads.len() * d_head
            )));
        }
        if !wo.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("wo contains non-finite entries"));
        }
        Ok(Self { heads, wo })
    }

    pub fn heads(&self) -> &[HeadParams] {
        &self.heads
    }

    pub fn wo(&self) -> &Array2<f64> {
        &self.wo
    }

    pub fn input_dim(&self) -> usize {
        self.heads[0].input_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.heads[0].head_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.wo.ncols()
    }

    pub fn random(rng: &mut impl Rng, d_in: usize, d_out: usize, heads: usize, d_head: usize, scale: f64) -> Self {
        let head_params = (0..heads).map(|_| HeadParams::random(rng, d_in, d_head, scale)).collect();
        let wo = Array2::from_shape_fn((heads * d_head, d_out), |_| rng.random_range(-scale..scale));
        Self { heads: head_params, wo }
    }

    /// Serializes as `head{i}.{wq,wk,wv,bq,bk,bv}` plus `wo`.
    pub fn to_tensor_file(&self) -> TensorFile {
        let mut file = TensorFile::new();
        for (i, h) in self.heads.iter().enumerate() {
            file.insert_mat(&format!("head{i}.wq"), &h.wq).unwrap();
            file.insert_mat(&format!("head{i}.wk"), &h.wk).unwrap();
            file.insert_mat(&format!("head{i}.wv"), &h.wv).unwrap();
            file.insert_vec(&format!("head{i}.bq"), &h.bq).unwrap();
            file.insert_vec(&format!("head{i}.bk"), &h.bk).unwrap();
            file.insert_vec(&format!("head{i}.bv"), &h.bv).unwrap();
        }
        file.insert_mat("wo", &self.wo).unwrap();
        file
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        let mut heads = Vec::new();
        for i in 0.. {
            if file.get(&format!("head{i}.wq")).is_none() {
                break;
            }
            heads.push(HeadParams::new(
                file.mat(&format!("head{i}.wq"))?,
                file.mat(&format!("head{i}.wk"))?,
                file.mat(&format!("head{i}.wv"))?,
                file.vec(&format!("head{i}.bq"))?,
                file.vec(&format!("head{i}.bk"))?,
                file.vec(&format!("head{i}.bv"))?,
            )?);
        }
        Self::new(heads, file.mat("wo")?)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows_inplace(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Stacks the `2F+1` context frames of every time step along the channel
/// axis. `F = 0` degenerates to a copy.
pub fn build_context(x: &FeatureTensor, context_radius: usize) -> ContextTensor {
    let (t_len, c, d) = x.data().dim();
    let span = 2 * context_radius + 1;
    let mut data = Array3::zeros((t_len, span * c, d));
    for t in 0..t_len {
        for (j, src) in (t as isize - context_radius as isize..=t as isize + context_radius as isize).enumerate() {
            if src < 0 || src >= t_len as isize {
                continue;
            }
            data.slice_mut(s![t, j * c..(j + 1) * c, ..])
                .assign(&x.data().slice(s![src as usize, .., ..]));
        }
    }
    ContextTensor { data, radius: context_radius, source_channels: c }
}

fn check_head_dims(x: &FeatureTensor, xcc: &ContextTensor, p: &HeadParams) -> Result<()> {
    let (t, c, d) = x.data().dim();
    if p.input_dim() != d {
        return Err(Error::invalid(format!(
            "head expects input dim {}, feature tensor has {d}",
            p.input_dim()
        )));
    }
    let (tc, m, dc) = xcc.data().dim();
    if tc != t || dc != d || m != (2 * xcc.radius + 1) * c || xcc.source_channels != c {
        return Err(Error::invalid(format!(
            "context tensor shape [{tc}, {m}, {dc}] inconsistent with input [{t}, {c}, {d}] at radius {}",
            xcc.radius
        )));
    }
    Ok(())
}

/// Single MFCCA head. Per time step, rows of `x_t` are queries and the
/// context rows are keys/values; logits are scaled by `1/sqrt(D_head)`.
/// Output is `[T, C, D_head]`.
pub fn mfcca_head(x: &FeatureTensor, xcc: &ContextTensor, p: &HeadParams) -> Result<FeatureTensor> {
    Ok(mfcca_head_detailed(x, xcc, p)?.0)
}

/// Like [`mfcca_head`] but also returns the per-time-step attention
/// matrices (`[C, (2F+1)·C]` each).
pub fn mfcca_head_detailed(
    x: &FeatureTensor,
    xcc: &ContextTensor,
    p: &HeadParams,
) -> Result<(FeatureTensor, Vec<Array2<f64>>)> {
    check_head_dims(x, xcc, p)?;
    let (t_len, c, _) = x.data().dim();
    let d_head = p.head_dim();
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut out = Array3::zeros((t_len, c, d_head));
    let mut attn = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let x_t = x.data().slice(s![t, .., ..]);
        let cc_t = xcc.data().slice(s![t, .., ..]);
        let mut q = x_t.dot(&p.wq);
        q += &p.bq;
        let mut k = cc_t.dot(&p.wk);
        k += &p.bk;
        let mut v = cc_t.dot(&p.wv);
        v += &p.bv;
        let mut a = q.dot(&k.t());
        a.mapv_inplace(|z| z * scale);
        softmax_rows_inplace(&mut a);
        out.slice_mut(s![t, .., ..]).assign(&a.dot(&v));
        attn.push(a);
    }
    Ok((FeatureTensor::new(out)?, attn))
}

/// Single FLCCA head: keys/values from the channel-mean sequence, one
/// temporal attention pass per query channel. Output is `[T, C, D_head]`.
pub fn flcca_head(x: &FeatureTensor, p: &HeadParams) -> Result<FeatureTensor> {
    Ok(flcca_head_detailed(x, p)?.0)
}

/// Like [`flcca_head`] but also returns the per-channel attention matrices
/// (`[T, T]` each).
pub fn flcca_head_detailed(x: &FeatureTensor, p: &HeadParams) -> Result<(FeatureTensor, Vec<Array2<f64>>)> {
    let (t_len, c, d) = x.data().dim();
    if p.input_dim() != d {
        return Err(Error::invalid(format!(
            "head expects input dim {}, feature tensor has {d}",
            p.input_dim()
        )));
    }
    let d_head = p.head_dim();
    let scale = 1.0 / (d_head as f64).sqrt();
    let mean = x.data().mean_axis(Axis(1)).expect("C >= 1");
    let mut k = mean.dot(&p.wk);
    k += &p.bk;
    let mut v = mean.dot(&p.wv);
    v += &p.bv;
    let mut out = Array3::zeros((t_len, c, d_head));
    let mut attn = Vec::with_capacity(c);
    for ch in 0..c {
        let x_c = x.data().slice(s![.., ch, ..]);
        let mut q = x_c.dot(&p.wq);
        q += &p.bq;
        let mut a = q.dot(&k.t());
        a.mapv_inplace(|z| z * scale);
        softmax_rows_inplace(&mut a);
        out.slice_mut(s![.., ch, ..]).assign(&a.dot(&v));
        attn.push(a);
    }
    Ok((FeatureTensor::new(out)?, attn))
}

fn check_layer(x: &FeatureTensor, cfg: &AttentionConfig, p: &MultiHeadParams) -> Result<()> {
    if p.heads.len() != cfg.heads {
        return Err(Error::invalid(format!(
            "config expects {} heads, parameters have {}",
            cfg.heads,
            p.heads.len()
        )));
    }
    if p.head_dim() != cfg.head_dim {
        return Err(Error::invalid(format!(
            "config expects head dim {}, parameters have {}",
            cfg.head_dim,
            p.head_dim()
        )));
    }
    if p.output_dim() != x.features() {
        return Err(Error::invalid(format!(
            "output projection yields {} features, input has {}",
            p.output_dim(),
            x.features()
        )));
    }
    Ok(())
}

fn combine_heads(heads: &[FeatureTensor], wo: &Array2<f64>) -> Result<FeatureTensor> {
    let (t_len, c, d_head) = heads[0].data().dim();
    let mut concat = Array3::zeros((t_len, c, heads.len() * d_head));
    for (i, h) in heads.iter().enumerate() {
        concat
            .slice_mut(s![.., .., i * d_head..(i + 1) * d_head])
            .assign(h.data());
    }
    let d_out = wo.ncols();
    let mut out = Array3::zeros((t_len, c, d_out));
    for t in 0..t_len {
        out.slice_mut(s![t, .., ..]).assign(&concat.slice(s![t, .., ..]).dot(wo));
    }
    FeatureTensor::new(out)
}

/// Multi-head MFCCA/CLCCA layer: heads run independently on the shared
/// context, outputs are concatenated along the feature axis and projected
/// by `wo`. Output is `[T, C, D]` with `D` the input feature dimension.
pub fn mfcca_multihead(x: &FeatureTensor, cfg: &AttentionConfig, p: &MultiHeadParams) -> Result<FeatureTensor> {
    if cfg.variant == Variant::Flcca {
        return Err(Error::invalid("mfcca_multihead handles MFCCA/CLCCA; use flcca"));
    }
    check_layer(x, cfg, p)?;
    let xcc = build_context(x, cfg.context_radius);
    let heads = p
        .heads
        .iter()
        .map(|h| mfcca_head(x, &xcc, h))
        .collect::<Result<Vec<_>>>()?;
    combine_heads(&heads, &p.wo)
}

/// Multi-head FLCCA layer with the same concat-then-project combination.
pub fn flcca(x: &FeatureTensor, p: &MultiHeadParams) -> Result<FeatureTensor> {
    if p.output_dim() != x.features() {
        return Err(Error::invalid(format!(
            "output projection yields {} features, input has {}",
            p.output_dim(),
            x.features()
        )));
    }
    let heads = p
        .heads
        .iter()
        .map(|h| flcca_head(x, h))
        .collect::<Result<Vec<_>>>()?;
    combine_heads(&heads, &p.wo)
}

/// Dispatches on `cfg.variant`.
pub fn attention_forward(x: &FeatureTensor, cfg: &AttentionConfig, p: &MultiHeadParams) -> Result<FeatureTensor> {
    match cfg.variant {
        Variant::Mfcca | Variant::Clcca => mfcca_multihead(x, cfg, p),
        Variant::Flcca => {
            check_layer(x, cfg, p)?;
            flcca(x, p)
        }
    }
}

/// Gradients of `<upstream, mfcca_head(x)>` with respect to the input and
/// every head parameter.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub x: Array3<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bq: Array1<f64>,
    pub bk: Array1<f64>,
    pub bv: Array1<f64>,
}

/// Analytic gradients for the single-head MFCCA forward (CLCCA when
/// `context_radius = 0`). `upstream` must have the forward output shape
/// `[T, C, D_head]`; the result contains the gradients of
/// `sum(upstream * forward(x))`.
pub fn attention_backward(
    x: &FeatureTensor,
    p: &HeadParams,
    context_radius: usize,
    upstream: &FeatureTensor,
) -> Result<HeadGradients> {
    let (t_len, c, d) = x.data().dim();
    let d_head = p.head_dim();
    if upstream.data().dim() != (t_len, c, d_head) {
        return Err(Error::invalid(format!(
            "upstream shape {:?} does not match forward output [{t_len}, {c}, {d_head}]",
            upstream.data().dim()
        )));
    }
    let xcc = build_context(x, context_radius);
    check_head_dims(x, &xcc, p)?;
    let scale = 1.0 / (d_head as f64).sqrt();
    let span = 2 * context_radius + 1;

    let mut gx = Array3::zeros((t_len, c, d));
    let mut gwq = Array2::zeros(p.wq.dim());
    let mut gwk = Array2::zeros(p.wk.dim());
    let mut gwv = Array2::zeros(p.wv.dim());
    let mut gbq = Array1::zeros(d_head);
    let mut gbk = Array1::zeros(d_head);
    let mut gbv = Array1::zeros(d_head);

    for t in 0..t_len {
        let x_t = x.data().slice(s![t, .., ..]);
        let cc_t = xcc.data().slice(s![t, .., ..]);
        let mut q = x_t.dot(&p.wq);
        q += &p.bq;
        let mut k = cc_t.dot(&p.wk);
        k += &p.bk;
        let mut v = cc_t.dot(&p.wv);
        v += &p.bv;
        let mut a = q.dot(&k.t());
        a.mapv_inplace(|z| z * scale);
        softmax_rows_inplace(&mut a);

        let dh = upstream.data().slice(s![t, .., ..]);
        let da = dh.dot(&v.t());
        let dv = a.t().dot(&dh);
        // Softmax backward per row: ds = a * (da - <da, a>).
        let mut ds = Array2::zeros(a.dim());
        for i in 0..a.nrows() {
            let dot: f64 = da.row(i).iter().zip(a.row(i)).map(|(g, w)| g * w).sum();
            for j in 0..a.ncols() {
                ds[[i, j]] = a[[i, j]] * (da[[i, j]] - dot);
            }
        }
        let dq = ds.dot(&k).mapv(|z| z * scale);
        let dk = ds.t().dot(&q).mapv(|z| z * scale);

        gwq += &x_t.t().dot(&dq);
        gwk += &cc_t.t().dot(&dk);
        gwv += &cc_t.t().dot(&dv);
        gbq += &dq.sum_axis(Axis(0));
        gbk += &dk.sum_axis(Axis(0));
        gbv += &dv.sum_axis(Axis(0));

        let mut gx_t = dq.dot(&p.wq.t());
        gx.slice_mut(s![t, .., ..]).zip_mut_with(&gx_t, |g, v| *g += *v);
        // Context rows feed both K and V; scatter their gradient back to
        // the source frames, skipping zero-padded blocks.
        let dcc = dk.dot(&p.wk.t()) + dv.dot(&p.wv.t());
        for j in 0..span {
            let src = t as isize + j as isize - context_radius as isize;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            gx_t = dcc.slice(s![j * c..(j + 1) * c, ..]).to_owned();
            gx.slice_mut(s![src as usize, .., ..])
                .zip_mut_with(&gx_t, |g, v| *g += *v);
        }
    }

    Ok(HeadGradients { x: gx, wq: gwq, wk: gwk, wv: gwv, bq: gbq, bk: gbk, bv: gbv })
}
