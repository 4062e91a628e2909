//! Toy multi-head encoder-decoder with inconsistency-guided detail
//! regularization.
//!
//! The encoder halves resolution five times (output strides 1 through 32).
//! The decoder walks back up with skip concats. At OS8 the decoder feature is
//! the matting representation `Ma`; a 3x3 conv over `Ma` concatenated with the
//! upsampled OS32 feature produces a two-channel offset map, `Se` is `Ma`
//! warped by those offsets, and the inconsistency map is `IN = Ma - Se`. The
//! segmentation head reads `Se`, the matting path reads `Ma`, and `IN` is
//! re-injected (detached, so matting gradients never route through the warp)
//! into the OS4 and OS1 decoder stages.

pub mod loss;
pub mod synth;
pub mod train;

use crate::autodiff::{CheckpointEntry, Graph, Real, Shape, Tensor};
use crate::distfield::DistanceField;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageF32};
use crate::pseudogt::SupervisionMap;
use crate::seeds::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Which supervision a training sample carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "matting")]
    MattingData,
    #[serde(rename = "seg")]
    SegData,
    #[serde(rename = "bgline")]
    BgLine,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::MattingData => "matting",
            Task::SegData => "seg",
            Task::BgLine => "bgline",
        }
    }
}

/// One training sample: image + guidance, plus the ground truths its task
/// requires.
#[derive(Clone, Debug)]
pub struct SampleBundle {
    pub task: Task,
    pub image: ImageF32,
    pub guidance: BinaryMask,
    pub alpha: Option<ImageF32>,
    pub seg: Option<BinaryMask>,
    pub edge: Option<BinaryMask>,
    pub bl: Option<SupervisionMap>,
    pub dist: Option<DistanceField>,
}

impl SampleBundle {
    /// Per-task presence and shape invariants.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.image.height, self.image.width);
        if self.image.channels != 3 {
            return Err(Error::Shape("sample image must have 3 channels".into()));
        }
        if self.guidance.height != h || self.guidance.width != w || self.guidance.channels != 1 {
            return Err(Error::Shape("guidance size mismatch".into()));
        }
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "{} sample missing {what}",
                    self.task.name()
                )))
            }
        };
        match self.task {
            Task::MattingData => need(self.alpha.is_some(), "alpha")?,
            Task::SegData => {
                need(self.seg.is_some(), "seg")?;
                need(self.edge.is_some(), "edge")?;
            }
            Task::BgLine => {
                need(self.alpha.is_some(), "alpha")?;
                need(self.bl.is_some(), "background-line map")?;
                need(self.dist.is_some(), "distance field")?;
            }
        }
        for a in self.alpha.iter().chain(self.seg.iter()).chain(self.edge.iter()) {
            if a.height != h || a.width != w || a.channels != 1 {
                return Err(Error::Shape("ground-truth size mismatch".into()));
            }
        }
        if let Some(bl) = &self.bl {
            if bl.values.height != h || bl.values.width != w {
                return Err(Error::Shape("background-line map size mismatch".into()));
            }
        }
        if let Some(d) = &self.dist {
            if d.height != h || d.width != w {
                return Err(Error::Shape("distance field size mismatch".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub base_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { base_channels: 8 }
    }
}

struct LayerSpec {
    name: &'static str,
    o: usize,
    i: usize,
    k: usize,
}

/// Every learnable conv in forward order. Channel plan with base `b`:
/// encoder b,2b,4b,8b,8b,12b at OS1..OS32, decoder 8b,8b,6b,4b,3b with skip
/// concats, the offset conv reads concat(Ma, up4(OS32)), 3x3 heads read
/// their stage.
fn layer_table(b: usize) -> Vec<LayerSpec> {
    let l = |name, o, i, k| LayerSpec { name, o, i, k };
    vec![
        l("enc1", b, 4, 3),
        l("enc2", 2 * b, b, 3),
        l("enc3", 4 * b, 2 * b, 3),
        l("enc4", 8 * b, 4 * b, 3),
        l("enc5", 8 * b, 8 * b, 3),
        l("enc6", 12 * b, 8 * b, 3),
        l("dec5", 8 * b, 20 * b, 3),
        l("dec4", 8 * b, 16 * b, 3),
        l("igdr_delta", 2, 20 * b, 3),
        l("head_alpha8", 1, 8 * b, 3),
        l("head_seg8", 1, 8 * b, 3),
        l("dec3", 6 * b, 20 * b, 3),
        l("head_alpha4", 1, 6 * b, 3),
        l("dec2", 4 * b, 8 * b, 3),
        l("dec1", 3 * b, 13 * b, 3),
        l("head_alpha1", 1, 3 * b, 3),
        l("head_edge1", 1, 3 * b, 3),
        l("head_bgline1", 1, 3 * b, 3),
    ]
}

#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<F>,
}

pub struct Network<F: Real> {
    pub cfg: NetworkConfig,
    /// Insertion-ordered; weight then bias per layer.
    pub params: Vec<Param<F>>,
    index: HashMap<String, usize>,
}

impl<F: Real> Network<F> {
    pub fn param(&self, name: &str) -> &Param<F> {
        &self.params[self.index[name]]
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Param<F> {
        let i = self.index[name];
        &mut self.params[i]
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Order-sensitive digest of the exact parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for p in &self.params {
            for &v in &p.data {
                let bits = v.to_f64().unwrap().to_bits();
                h = (h ^ bits).wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    pub fn to_entries(&self) -> Vec<CheckpointEntry> {
        self.params
            .iter()
            .map(|p| CheckpointEntry {
                name: p.name.clone(),
                dims: p.shape.dims.clone(),
                data: p.data.iter().map(|v| v.to_f64().unwrap() as f32).collect(),
            })
            .collect()
    }

    /// Rebuild from checkpoint entries; the base width is recovered from the
    /// first encoder conv and the full layer table is validated against it.
    pub fn from_entries(entries: &[CheckpointEntry]) -> Result<Network<F>> {
        let enc1 = entries
            .iter()
            .find(|e| e.name == "enc1.w")
            .ok_or_else(|| Error::Format("checkpoint missing enc1.w".into()))?;
        if enc1.dims.len() != 4 {
            return Err(Error::Format("enc1.w must be rank 4".into()));
        }
        let cfg = NetworkConfig {
            base_channels: enc1.dims[0],
        };
        let mut net: Network<F> = build_network(&cfg, 0);
        if entries.len() != net.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, network needs {}",
                entries.len(),
                net.params.len()
            )));
        }
        for e in entries {
            let Some(&i) = net.index.get(&e.name) else {
                return Err(Error::Format(format!("unknown tensor {}", e.name)));
            };
            if net.params[i].shape.dims != e.dims {
                return Err(Error::Format(format!("shape mismatch for {}", e.name)));
            }
            net.params[i].data = e.data.iter().map(|&v| F::from(v).unwrap()).collect();
        }
        Ok(net)
    }
}

/// Deterministic init: each layer gets its own derived stream, weights and
/// bias uniform in (-s, s) with s = 1/sqrt(fan_in).
pub fn build_network<F: Real>(cfg: &NetworkConfig, seed: u64) -> Network<F> {
    let mut params = Vec::new();
    let mut index = HashMap::new();
    for (li, spec) in layer_table(cfg.base_channels).iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, li as u64));
        let fan_in = (spec.i * spec.k * spec.k) as f64;
        let s = 1.0 / fan_in.sqrt();
        let mut draw = |n: usize| -> Vec<F> {
            (0..n)
                .map(|_| F::from(rng.gen_range(-s..s)).unwrap())
                .collect()
        };
        let w = Param {
            name: format!("{}.w", spec.name),
            shape: Shape::oikk(spec.o, spec.i, spec.k, spec.k),
            data: draw(spec.o * spec.i * spec.k * spec.k),
        };
        let b = Param {
            name: format!("{}.b", spec.name),
            shape: Shape::vector(spec.o),
            data: draw(spec.o),
        };
        index.insert(w.name.clone(), params.len());
        params.push(w);
        index.insert(b.name.clone(), params.len());
        params.push(b);
    }
    Network {
        cfg: *cfg,
        params,
        index,
    }
}

/// Products of the detail-regularization block.
pub struct IgdrOut {
    pub delta: Tensor,
    pub se: Tensor,
    pub in_map: Tensor,
}

/// Offset map from concat(Ma, up4(OS32 feature)), then `Se = warp(Ma, delta)`
/// and `IN = Ma - Se`.
pub fn igdr_forward<F: Real>(
    g: &mut Graph<F>,
    ma: Tensor,
    feat_os32: Tensor,
    w_delta: Tensor,
    b_delta: Tensor,
) -> IgdrOut {
    let up1 = g.upsample_bilinear_2x(feat_os32);
    let up2 = g.upsample_bilinear_2x(up1);
    let cat = g.concat_channels(ma, up2);
    let delta = g.conv2d(cat, w_delta, Some(b_delta), 1, 1);
    let se = g.warp_with_offsets(ma, delta);
    let in_map = g.sub(ma, se);
    IgdrOut { delta, se, in_map }
}

/// Head tensors plus the intermediates tests probe.
pub struct NetworkOutputs {
    /// Sigmoid-activated alpha predictions at each head resolution.
    pub alpha_os8: Tensor,
    pub alpha_os4: Tensor,
    pub alpha_os1: Tensor,
    /// Logits.
    pub seg_os8: Tensor,
    pub edge_os1: Tensor,
    /// Sigmoid-activated.
    pub bgline_os1: Tensor,
    pub ma: Tensor,
    pub se: Tensor,
    pub in_map: Tensor,
    pub delta: Tensor,
}

pub struct ForwardHandles {
    pub outputs: NetworkOutputs,
    /// Leaves aligned with `Network::params` order, for gradient readback.
    pub param_leaves: Vec<Tensor>,
}

impl<F: Real> Network<F> {
    /// Build the forward graph for one sample. `image` is 3xHxW channel
    /// planes (see `ImageF32::to_planar`), `guidance` 1xHxW; both sides must
    /// be multiples of 32 so skip concats align.
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        image: &[F],
        guidance: &[F],
        height: usize,
        width: usize,
    ) -> Result<ForwardHandles> {
        if height % 32 != 0 || width % 32 != 0 {
            return Err(Error::Shape(format!(
                "input {height}x{width} must be a multiple of 32"
            )));
        }
        if image.len() != 3 * height * width || guidance.len() != height * width {
            return Err(Error::Shape("forward input length mismatch".into()));
        }
        let param_leaves: Vec<Tensor> = self
            .params
            .iter()
            .map(|p| g.leaf(p.shape.clone(), p.data.clone()))
            .collect();
        let t = |name: &str| param_leaves[self.index[name]];

        let mut input = Vec::with_capacity(4 * height * width);
        input.extend_from_slice(image);
        input.extend_from_slice(guidance);
        let x = g.leaf(Shape::chw(4, height, width), input);

        let block = |g: &mut Graph<F>, x: Tensor, name: &str, stride: usize| {
            let w = t(&format!("{name}.w"));
            let b = t(&format!("{name}.b"));
            let y = g.conv2d(x, w, Some(b), stride, 1);
            g.relu(y)
        };
        let head = |g: &mut Graph<F>, x: Tensor, name: &str| {
            let w = t(&format!("{name}.w"));
            let b = t(&format!("{name}.b"));
            g.conv2d(x, w, Some(b), 1, 1)
        };

        let e1 = block(g, x, "enc1", 1);
        let e2 = block(g, e1, "enc2", 2);
        let e3 = block(g, e2, "enc3", 2);
        let e4 = block(g, e3, "enc4", 2);
        let e5 = block(g, e4, "enc5", 2);
        let e6 = block(g, e5, "enc6", 2);

        let u6 = g.upsample_bilinear_2x(e6);
        let c5 = g.concat_channels(u6, e5);
        let d5 = block(g, c5, "dec5", 1);
        let u5 = g.upsample_bilinear_2x(d5);
        let c4 = g.concat_channels(u5, e4);
        let ma = block(g, c4, "dec4", 1);

        let igdr = igdr_forward(g, ma, e6, t("igdr_delta.w"), t("igdr_delta.b"));

        let a8 = head(g, ma, "head_alpha8");
        let alpha_os8 = g.sigmoid(a8);
        let seg_os8 = head(g, igdr.se, "head_seg8");

        // detached: the matting decoder sees IN's values but owes the warp
        // no gradient and no ancestry
        let in_det = g.detach(igdr.in_map);

        let um = g.upsample_bilinear_2x(ma);
        let ui4 = g.upsample_bilinear_2x(in_det);
        let c3a = g.concat_channels(um, e3);
        let c3 = g.concat_channels(c3a, ui4);
        let d3 = block(g, c3, "dec3", 1);
        let a4 = head(g, d3, "head_alpha4");
        let alpha_os4 = g.sigmoid(a4);

        let u3 = g.upsample_bilinear_2x(d3);
        let c2 = g.concat_channels(u3, e2);
        let d2 = block(g, c2, "dec2", 1);

        let u2 = g.upsample_bilinear_2x(d2);
        let ui8a = g.upsample_bilinear_2x(ui4);
        let ui8 = g.upsample_bilinear_2x(ui8a);
        let c1a = g.concat_channels(u2, e1);
        let c1 = g.concat_channels(c1a, ui8);
        let d1 = block(g, c1, "dec1", 1);

        let a1 = head(g, d1, "head_alpha1");
        let alpha_os1 = g.sigmoid(a1);
        let edge_os1 = head(g, d1, "head_edge1");
        let b1 = head(g, d1, "head_bgline1");
        let bgline_os1 = g.sigmoid(b1);

        Ok(ForwardHandles {
            outputs: NetworkOutputs {
                alpha_os8,
                alpha_os4,
                alpha_os1,
                seg_os8,
                edge_os1,
                bgline_os1,
                ma,
                se: igdr.se,
                in_map: igdr.in_map,
                delta: igdr.delta,
            },
            param_leaves,
        })
    }
}
