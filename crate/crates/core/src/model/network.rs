use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

use super::layers::*;
use super::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Channels of the first encoder stage; stage `l` has `base_width·2^l`.
    pub base_width: usize,
    /// Number of down-sampling stages `L`.
    pub depth: usize,
    pub num_classes: usize,
    /// Embedding dimension `d` of every head.
    pub latent_dim: usize,
    /// Local embeddings pool decoder features into a `grid × grid` layout.
    pub local_grid: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { in_channels: 1, base_width: 16, depth: 3, num_classes: 4, latent_dim: 128, local_grid: 4 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.base_width == 0
            || self.depth == 0
            || self.num_classes == 0
            || self.latent_dim == 0
            || self.local_grid == 0
        {
            return Err(Error::Config(format!("model extents must all be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn check_input(&self, c: usize, h: usize, w: usize) -> Result<()> {
        let m = 1 << self.depth;
        if c != self.in_channels || h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "input [{c}, {h}, {w}] needs {} channels and sides divisible by {m}",
                self.in_channels
            )));
        }
        if h % self.local_grid != 0 || w % self.local_grid != 0 {
            return Err(Error::ShapeMismatch(format!(
                "input [{h}, {w}] not divisible by the {}-cell local grid",
                self.local_grid
            )));
        }
        Ok(())
    }

    /// `(layer, cout, cin, kernel)` in definition order.
    fn layers(&self) -> Vec<(String, usize, usize, usize)> {
        let l = self.depth;
        let d = self.latent_dim;
        let mut out = Vec::new();
        for lvl in 0..l {
            let cin = if lvl == 0 { self.in_channels } else { self.width(lvl - 1) };
            out.push((format!("enc{lvl}.conv1"), self.width(lvl), cin, 3));
            out.push((format!("enc{lvl}.conv2"), self.width(lvl), self.width(lvl), 3));
        }
        out.push(("mid.conv1".into(), self.width(l), self.width(l - 1), 3));
        out.push(("mid.conv2".into(), self.width(l), self.width(l), 3));
        for lvl in (0..l).rev() {
            out.push((format!("dec{lvl}.conv1"), self.width(lvl), self.width(lvl + 1) + self.width(lvl), 3));
            out.push((format!("dec{lvl}.conv2"), self.width(lvl), self.width(lvl), 3));
        }
        let c0 = self.width(0);
        out.push(("seg".into(), self.num_classes, c0, 1));
        out.push(("rep.conv1".into(), c0, c0, 1));
        out.push(("rep.conv2".into(), d, c0, 1));
        for (head, cin) in [("g", self.width(l)), ("l", c0)] {
            out.push((format!("proj_{head}.fc1"), d, cin, 1));
            out.push((format!("proj_{head}.fc2"), d, d, 1));
            out.push((format!("pred_{head}.fc1"), d, d, 1));
            out.push((format!("pred_{head}.fc2"), d, d, 1));
        }
        out
    }
}

/// Which optional heads a forward pass evaluates. Logits are always produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSelection {
    pub dense: bool,
    pub global: bool,
    pub local: bool,
}

impl HeadSelection {
    pub const ALL: Self = Self { dense: true, global: true, local: true };
    pub const LOGITS: Self = Self { dense: false, global: false, local: false };
    pub const DENSE: Self = Self { dense: true, global: false, local: false };
    pub const EMBEDDINGS: Self = Self { dense: false, global: true, local: true };
}

/// Unit-norm head outputs for one image. Row-major, one embedding per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadOutputs {
    /// Projector output `v_g`, `[d]`.
    pub v_global: Option<Vec<f64>>,
    /// Predictor output `w_g`, `[d]`.
    pub w_global: Option<Vec<f64>>,
    /// `[grid², d]`, cells in row-major grid order.
    pub v_local: Option<Vec<f64>>,
    pub w_local: Option<Vec<f64>>,
    /// Representation head, `[H·W, d]` in pixel order.
    pub dense_reps: Option<Vec<f64>>,
}

/// Upstream gradients matching [`HeadOutputs`] (plus logits `[K, H·W]`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadGrads {
    pub logits: Option<Vec<f64>>,
    pub v_global: Option<Vec<f64>>,
    pub w_global: Option<Vec<f64>>,
    pub v_local: Option<Vec<f64>>,
    pub w_local: Option<Vec<f64>>,
    pub dense_reps: Option<Vec<f64>>,
}

struct ConvCache {
    cols: Vec<f64>,
    /// Post-activation output.
    out: Vec<f64>,
}

struct StageCache {
    h: usize,
    w: usize,
    cin: usize,
    conv1: ConvCache,
    conv2: ConvCache,
}

struct MlpCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
}

struct EmbedCache {
    /// Columns fed to the projector, `[cin, n]`.
    n: usize,
    proj: MlpCache,
    v_unit: Vec<f64>,
    v_norms: Vec<f64>,
    pred: MlpCache,
    w_unit: Vec<f64>,
    w_norms: Vec<f64>,
}

struct RepCache {
    hidden: Vec<f64>,
    unit: Vec<f64>,
    norms: Vec<f64>,
}

struct Cache {
    enc: Vec<StageCache>,
    mid: StageCache,
    /// Indexed by level.
    dec: Vec<StageCache>,
    rep: Option<RepCache>,
    global: Option<EmbedCache>,
    local: Option<EmbedCache>,
}

/// Forward result for one image, retaining what backward needs.
pub struct ImageForward {
    pub height: usize,
    pub width: usize,
    /// `[K, H·W]`.
    pub logits: Vec<f64>,
    pub heads: HeadOutputs,
    cache: Cache,
}

/// Encoder-decoder with skip connections, tanh activations and the
/// segmentation, representation, projector and predictor heads.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationNetwork {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn weight(layer: &str) -> String {
    format!("{layer}.weight")
}

fn bias(layer: &str) -> String {
    format!("{layer}.bias")
}

/// Zero mean, unit variance over the whole image; constant images map to zero.
fn standardize(image: &[f64]) -> Vec<f64> {
    let n = image.len() as f64;
    let mean = image.iter().sum::<f64>() / n;
    let var = image.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var.sqrt() + 1e-8);
    image.iter().map(|x| (x - mean) * inv).collect()
}

impl SegmentationNetwork {
    /// Xavier-uniform weights drawn in definition order from `seed`; zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::new(seed);
        let mut params = ParamStore::new();
        for (name, cout, cin, k) in config.layers() {
            let fan = (cin + cout) * k * k;
            let limit = (6.0 / fan as f64).sqrt();
            let n = cout * cin * k * k;
            let data: Vec<f64> = (0..n).map(|_| (2.0 * rng.uniform() - 1.0) * limit).collect();
            let shape = if k == 1 { vec![cout, cin] } else { vec![cout, cin, k, k] };
            params.insert(weight(&name), Tensor::new(shape, data)?);
            params.insert(bias(&name), Tensor::zeros(vec![cout]));
        }
        Ok(Self { config, params })
    }

    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::new(config, 0)?;
        reference.params.check_compatible(&params)?;
        Ok(Self { config, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.num_scalars()
    }

    fn dims(&self, layer: &str) -> (usize, usize) {
        let s = self.params.get(&weight(layer)).expect("layer exists").shape();
        (s[0], s[1])
    }

    fn conv(&self, layer: &str, x: &[f64], cin: usize, h: usize, w: usize) -> ConvCache {
        let (cout, _) = self.dims(layer);
        let cols = im2col3(x, cin, h, w);
        let mut out = affine(self.params.data(&weight(layer)), self.params.data(&bias(layer)), &cols, cout, cin * 9, h * w);
        tanh_in_place(&mut out);
        ConvCache { cols, out }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        layer: &str,
        cache: &ConvCache,
        mut dout: Vec<f64>,
        cin: usize,
        h: usize,
        w: usize,
        grads: &mut ParamStore,
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        let (cout, _) = self.dims(layer);
        tanh_backward_in_place(&mut dout, &cache.out);
        let (dw, db) = grads.weight_bias_mut(layer);
        affine_backward(self.params.data(&weight(layer)), &cache.cols, &dout, cout, cin * 9, h * w, dw, db, need_dx)
            .map(|dcols| col2im3(&dcols, cin, h, w))
    }

    fn stage(&self, prefix: &str, x: &[f64], cin: usize, h: usize, w: usize) -> StageCache {
        let conv1 = self.conv(&format!("{prefix}.conv1"), x, cin, h, w);
        let c = self.dims(&format!("{prefix}.conv1")).0;
        let conv2 = self.conv(&format!("{prefix}.conv2"), &conv1.out, c, h, w);
        StageCache { h, w, cin, conv1, conv2 }
    }

    fn stage_backward(
        &self,
        prefix: &str,
        cache: &StageCache,
        dout: Vec<f64>,
        grads: &mut ParamStore,
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        let c = self.dims(&format!("{prefix}.conv1")).0;
        let d1 = self
            .conv_backward(&format!("{prefix}.conv2"), &cache.conv2, dout, c, cache.h, cache.w, grads, true)
            .expect("requested");
        self.conv_backward(&format!("{prefix}.conv1"), &cache.conv1, d1, cache.cin, cache.h, cache.w, grads, need_dx)
    }

    /// Two-layer map on `[cin, n]` columns: `fc2(tanh(fc1 x))`.
    fn mlp(&self, prefix: &str, input: Vec<f64>, n: usize) -> (MlpCache, Vec<f64>) {
        let (l1, l2) = (format!("{prefix}.fc1"), format!("{prefix}.fc2"));
        let (hdim, cin) = self.dims(&l1);
        let (out_dim, _) = self.dims(&l2);
        let mut hidden = affine(self.params.data(&weight(&l1)), self.params.data(&bias(&l1)), &input, hdim, cin, n);
        tanh_in_place(&mut hidden);
        let out = affine(self.params.data(&weight(&l2)), self.params.data(&bias(&l2)), &hidden, out_dim, hdim, n);
        (MlpCache { input, hidden }, out)
    }

    fn mlp_backward(&self, prefix: &str, cache: &MlpCache, dout: &[f64], n: usize, grads: &mut ParamStore) -> Vec<f64> {
        let (l1, l2) = (format!("{prefix}.fc1"), format!("{prefix}.fc2"));
        let (hdim, cin) = self.dims(&l1);
        let (out_dim, _) = self.dims(&l2);
        let mut dh = {
            let (dw, db) = grads.weight_bias_mut(&l2);
            affine_backward(self.params.data(&weight(&l2)), &cache.hidden, dout, out_dim, hdim, n, dw, db, true)
                .expect("requested")
        };
        tanh_backward_in_place(&mut dh, &cache.hidden);
        let (dw, db) = grads.weight_bias_mut(&l1);
        affine_backward(self.params.data(&weight(&l1)), &cache.input, &dh, hdim, cin, n, dw, db, true).expect("requested")
    }

    fn embed(&self, head: &str, pooled: Vec<f64>, n: usize) -> (EmbedCache, Vec<f64>, Vec<f64>) {
        let d = self.config.latent_dim;
        let (proj, z) = self.mlp(&format!("proj_{head}"), pooled, n);
        let (v_unit, v_norms) = normalize_columns(&z, d, n);
        let (pred, p) = self.mlp(&format!("pred_{head}"), z, n);
        let (w_unit, w_norms) = normalize_columns(&p, d, n);
        let v = transpose(&v_unit, d, n);
        let w = transpose(&w_unit, d, n);
        (EmbedCache { n, proj, v_unit, v_norms, pred, w_unit, w_norms }, v, w)
    }

    /// Returns the gradient w.r.t. the pooled projector input, `[cin, n]`.
    fn embed_backward(
        &self,
        head: &str,
        cache: &EmbedCache,
        dv: Option<&[f64]>,
        dw: Option<&[f64]>,
        grads: &mut ParamStore,
    ) -> Vec<f64> {
        let d = self.config.latent_dim;
        let n = cache.n;
        let mut dz = vec![0.0; d * n];
        if let Some(dw) = dw {
            let dp = normalize_columns_backward(&transpose(dw, n, d), &cache.w_unit, &cache.w_norms, n);
            dz = self.mlp_backward(&format!("pred_{head}"), &cache.pred, &dp, n, grads);
        }
        if let Some(dv) = dv {
            let extra = normalize_columns_backward(&transpose(dv, n, d), &cache.v_unit, &cache.v_norms, n);
            dz.iter_mut().zip(&extra).for_each(|(a, b)| *a += b);
        }
        self.mlp_backward(&format!("proj_{head}"), &cache.proj, &dz, n, grads)
    }

    /// Forward pass on one `[C, H, W]` image.
    pub fn forward_image(&self, image: &[f64], h: usize, w: usize, heads: HeadSelection) -> Result<ImageForward> {
        let cfg = &self.config;
        let cin = cfg.in_channels;
        cfg.check_input(cin, h, w)?;
        if image.len() != cin * h * w {
            return Err(Error::ShapeMismatch(format!("{} values for a [{cin}, {h}, {w}] image", image.len())));
        }
        let l = cfg.depth;
        let mut enc = Vec::with_capacity(l);
        let mut x = standardize(image);
        let (mut ch, mut hh, mut ww) = (cin, h, w);
        for lvl in 0..l {
            let s = self.stage(&format!("enc{lvl}"), &x, ch, hh, ww);
            ch = cfg.width(lvl);
            x = avg_pool2(&s.conv2.out, ch, hh, ww);
            enc.push(s);
            hh /= 2;
            ww /= 2;
        }
        let mid = self.stage("mid", &x, ch, hh, ww);
        let mut up_src = mid.conv2.out.clone();
        let mut up_ch = cfg.width(l);
        let mut dec: Vec<Option<StageCache>> = (0..l).map(|_| None).collect();
        for lvl in (0..l).rev() {
            let mut cat = upsample2(&up_src, up_ch, hh, ww);
            hh *= 2;
            ww *= 2;
            cat.extend_from_slice(&enc[lvl].conv2.out);
            let s = self.stage(&format!("dec{lvl}"), &cat, up_ch + cfg.width(lvl), hh, ww);
            up_src = s.conv2.out.clone();
            up_ch = cfg.width(lvl);
            dec[lvl] = Some(s);
        }
        let dec: Vec<StageCache> = dec.into_iter().map(|s| s.expect("every level built")).collect();
        let features = &dec[0].conv2.out;
        let c0 = cfg.width(0);
        let hw = h * w;
        let logits =
            affine(self.params.data("seg.weight"), self.params.data("seg.bias"), features, cfg.num_classes, c0, hw);

        let mut outputs = HeadOutputs::default();
        let rep = heads.dense.then(|| {
            let mut hidden =
                affine(self.params.data("rep.conv1.weight"), self.params.data("rep.conv1.bias"), features, c0, c0, hw);
            tanh_in_place(&mut hidden);
            let d = cfg.latent_dim;
            let z = affine(self.params.data("rep.conv2.weight"), self.params.data("rep.conv2.bias"), &hidden, d, c0, hw);
            let (unit, norms) = normalize_columns(&z, d, hw);
            outputs.dense_reps = Some(transpose(&unit, d, hw));
            RepCache { hidden, unit, norms }
        });
        let global = heads.global.then(|| {
            let cl = cfg.width(l);
            let (bh, bw) = (h >> l, w >> l);
            let pooled = grid_pool(&mid.conv2.out, cl, bh, bw, 1);
            let (cache, v, wv) = self.embed("g", pooled, 1);
            outputs.v_global = Some(v);
            outputs.w_global = Some(wv);
            cache
        });
        let local = heads.local.then(|| {
            let g = cfg.local_grid;
            let pooled = grid_pool(features, c0, h, w, g);
            let (cache, v, wv) = self.embed("l", pooled, g * g);
            outputs.v_local = Some(v);
            outputs.w_local = Some(wv);
            cache
        });
        Ok(ImageForward {
            height: h,
            width: w,
            logits,
            heads: outputs,
            cache: Cache { enc, mid, dec, rep, global, local },
        })
    }

    /// Accumulates parameter gradients of `Σ ⟨upstream, output⟩` into `grads`.
    pub fn backward(&self, fwd: &ImageForward, upstream: &HeadGrads, grads: &mut ParamStore) -> Result<()> {
        let cfg = &self.config;
        let (h, w) = (fwd.height, fwd.width);
        let hw = h * w;
        let c0 = cfg.width(0);
        let d = cfg.latent_dim;
        let l = cfg.depth;
        let g = cfg.local_grid;
        let check = |name: &str, grad: &Option<Vec<f64>>, len: usize, present: bool| -> Result<()> {
            match grad {
                Some(v) if !present || v.len() != len => {
                    Err(Error::ShapeMismatch(format!("gradient for `{name}` has no matching output of length {len}")))
                }
                _ => Ok(()),
            }
        };
        check("logits", &upstream.logits, cfg.num_classes * hw, true)?;
        check("dense_reps", &upstream.dense_reps, hw * d, fwd.cache.rep.is_some())?;
        check("v_global", &upstream.v_global, d, fwd.cache.global.is_some())?;
        check("w_global", &upstream.w_global, d, fwd.cache.global.is_some())?;
        check("v_local", &upstream.v_local, g * g * d, fwd.cache.local.is_some())?;
        check("w_local", &upstream.w_local, g * g * d, fwd.cache.local.is_some())?;

        let features = &fwd.cache.dec[0].conv2.out;
        let mut dfeat = vec![0.0; c0 * hw];
        if let Some(dl) = &upstream.logits {
            let (dw, db) = grads.weight_bias_mut("seg");
            let dx = affine_backward(self.params.data("seg.weight"), features, dl, cfg.num_classes, c0, hw, dw, db, true)
                .expect("requested");
            dfeat.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        }
        if let (Some(dr), Some(rep)) = (&upstream.dense_reps, &fwd.cache.rep) {
            let dz = normalize_columns_backward(&transpose(dr, hw, d), &rep.unit, &rep.norms, hw);
            let mut dh = {
                let (dw, db) = grads.weight_bias_mut("rep.conv2");
                affine_backward(self.params.data("rep.conv2.weight"), &rep.hidden, &dz, d, c0, hw, dw, db, true)
                    .expect("requested")
            };
            tanh_backward_in_place(&mut dh, &rep.hidden);
            let (dw, db) = grads.weight_bias_mut("rep.conv1");
            let dx = affine_backward(self.params.data("rep.conv1.weight"), features, &dh, c0, c0, hw, dw, db, true)
                .expect("requested");
            dfeat.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        }
        if let Some(local) = &fwd.cache.local {
            if upstream.v_local.is_some() || upstream.w_local.is_some() {
                let dp = self.embed_backward("l", local, upstream.v_local.as_deref(), upstream.w_local.as_deref(), grads);
                let dx = grid_pool_backward(&dp, c0, h, w, g);
                dfeat.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            }
        }

        // Decoder, finest level first.
        let mut skip_grads: Vec<Vec<f64>> = Vec::with_capacity(l);
        let mut dup = dfeat;
        let (mut hh, mut ww) = (h, w);
        for lvl in 0..l {
            let cache = &fwd.cache.dec[lvl];
            let dcat = self.stage_backward(&format!("dec{lvl}"), cache, dup, grads, true).expect("requested");
            let up_ch = cfg.width(lvl + 1);
            let (dupsampled, dskip) = dcat.split_at(up_ch * hh * ww);
            skip_grads.push(dskip.to_vec());
            hh /= 2;
            ww /= 2;
            dup = upsample2_backward(dupsampled, up_ch, hh, ww);
        }
        let mut dmid = dup;
        if let Some(global) = &fwd.cache.global {
            if upstream.v_global.is_some() || upstream.w_global.is_some() {
                let dp =
                    self.embed_backward("g", global, upstream.v_global.as_deref(), upstream.w_global.as_deref(), grads);
                let dx = grid_pool_backward(&dp, cfg.width(l), hh, ww, 1);
                dmid.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            }
        }
        let mut dx = self.stage_backward("mid", &fwd.cache.mid, dmid, grads, true).expect("requested");
        for lvl in (0..l).rev() {
            let cache = &fwd.cache.enc[lvl];
            let mut dout = avg_pool2_backward(&dx, cfg.width(lvl), cache.h, cache.w);
            dout.iter_mut().zip(&skip_grads[lvl]).for_each(|(a, b)| *a += b);
            match self.stage_backward(&format!("enc{lvl}"), cache, dout, grads, lvl > 0) {
                Some(v) => dx = v,
                None => break,
            }
        }
        Ok(())
    }

    /// Batched forward on `[B, C, H, W]`: logits `[B, K, H, W]` plus per-image heads.
    pub fn forward(&self, images: &Tensor, heads: HeadSelection) -> Result<(Tensor, Vec<HeadOutputs>)> {
        let [b, c, h, w] = *images.shape() else {
            return Err(Error::ShapeMismatch(format!("expected [B, C, H, W], got {:?}", images.shape())));
        };
        self.config.check_input(c, h, w)?;
        let per = c * h * w;
        let k = self.config.num_classes;
        let mut logits = Vec::with_capacity(b * k * h * w);
        let mut outs = Vec::with_capacity(b);
        for img in images.data().chunks(per) {
            let f = self.forward_image(img, h, w, heads)?;
            logits.extend_from_slice(&f.logits);
            outs.push(f.heads);
        }
        Ok((Tensor::new(vec![b, k, h, w], logits)?, outs))
    }
}
