//! Image encoders behind one interface: a four-block test-scale convnet and
//! a pre-activated 18-conv-layer residual network for reference scale. Both
//! map `[3, S, S]` to a fixed-width feature vector and are deterministic in
//! evaluation mode (no batch statistics anywhere, so outputs are independent
//! of batch composition by construction).

use super::layers::{
    avg_pool2, avg_pool2_backward, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, Conv2d, Linear,
};
use super::tensor::Tensor;
use crate::config::BackboneKind;
use rand::Rng;

#[derive(Debug, Clone)]
pub enum Encoder {
    Small4(Small4),
    Resnet(PreactResnet),
}

pub enum EncoderCache {
    Small4(Small4Cache),
    Resnet(ResnetCache),
}

impl Encoder {
    pub fn new<R: Rng>(kind: BackboneKind, channels: [usize; 4], feature_dim: usize, rng: &mut R) -> Encoder {
        match kind {
            BackboneKind::Small4 => Encoder::Small4(Small4::new(channels, feature_dim, rng)),
            BackboneKind::PreactResnet18 => Encoder::Resnet(PreactResnet::new(feature_dim, rng)),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Encoder::Small4(e) => e.feature_dim(),
            Encoder::Resnet(e) => e.feature_dim(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Vec<f64>, EncoderCache) {
        match self {
            Encoder::Small4(e) => {
                let (f, c) = e.forward(x);
                (f, EncoderCache::Small4(c))
            }
            Encoder::Resnet(e) => {
                let (f, c) = e.forward(x);
                (f, EncoderCache::Resnet(c))
            }
        }
    }

    /// Forward without keeping activation caches.
    pub fn forward_eval(&self, x: &Tensor) -> Vec<f64> {
        self.forward(x).0
    }

    pub fn backward(&self, cache: &EncoderCache, dfeat: &[f64], grads: &mut [Tensor]) {
        match (self, cache) {
            (Encoder::Small4(e), EncoderCache::Small4(c)) => e.backward(c, dfeat, grads),
            (Encoder::Resnet(e), EncoderCache::Resnet(c)) => e.backward(c, dfeat, grads),
            _ => panic!("encoder cache kind mismatch"),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Encoder::Small4(e) => e.params(),
            Encoder::Resnet(e) => e.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Encoder::Small4(e) => e.params_mut(),
            Encoder::Resnet(e) => e.params_mut(),
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        match self {
            Encoder::Small4(e) => e.named_params(prefix),
            Encoder::Resnet(e) => e.named_params(prefix),
        }
    }
}

/// Four conv blocks (3x3, stride 1), ReLU, 2x2 average pooling after the
/// first three; global average pool then a linear map to the feature width.
#[derive(Debug, Clone)]
pub struct Small4 {
    convs: Vec<Conv2d>,
    head: Linear,
}

pub struct Small4Cache {
    /// Input to each conv.
    inputs: Vec<Tensor>,
    /// Conv output pre-ReLU.
    pre: Vec<Tensor>,
    /// Post-activation (pre-pool) spatial dims per block.
    gap_in: Tensor,
    gap_out: Vec<f64>,
}

impl Small4 {
    pub fn new<R: Rng>(channels: [usize; 4], feature_dim: usize, rng: &mut R) -> Small4 {
        let mut convs = Vec::with_capacity(4);
        let mut cin = 3;
        for &cout in &channels {
            convs.push(Conv2d::new(cin, cout, 3, 1, rng));
            cin = cout;
        }
        Small4 { convs, head: Linear::new(cin, feature_dim, rng) }
    }

    pub fn feature_dim(&self) -> usize {
        self.head.w.shape[0]
    }

    pub fn forward(&self, x: &Tensor) -> (Vec<f64>, Small4Cache) {
        let mut inputs = Vec::with_capacity(4);
        let mut pre = Vec::with_capacity(4);
        let mut cur = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            inputs.push(cur.clone());
            let mut y = conv.forward(&cur);
            pre.push(y.clone());
            relu(&mut y.data);
            cur = if i < self.convs.len() - 1 { avg_pool2(&y) } else { y };
        }
        let gap_in = cur;
        let gap_out = global_avg_pool(&gap_in);
        let feat = self.head.forward(&gap_out);
        (feat, Small4Cache { inputs, pre, gap_in, gap_out })
    }

    /// Gradient layout: [conv1.w, conv1.b, ..., conv4.w, conv4.b, head.w, head.b].
    pub fn backward(&self, cache: &Small4Cache, dfeat: &[f64], grads: &mut [Tensor]) {
        debug_assert_eq!(grads.len(), self.params().len());
        let nconv = self.convs.len();
        let (conv_grads, head_grads) = grads.split_at_mut(2 * nconv);
        let (gw, gb) = {
            let (a, b) = head_grads.split_at_mut(1);
            (&mut a[0], &mut b[0])
        };
        let dgap = self.head.backward(&cache.gap_out, dfeat, gw, gb);
        let (c, h, w) = (
            cache.gap_in.shape[0],
            cache.gap_in.shape[1],
            cache.gap_in.shape[2],
        );
        let mut dcur = global_avg_pool_backward(&dgap, c, h, w);

        for i in (0..nconv).rev() {
            // Invert pooling (except after the last conv), then ReLU, then conv.
            if i < nconv - 1 {
                let post = &cache.pre[i]; // post-relu dims == pre dims
                dcur = avg_pool2_backward(&dcur, post.shape[1], post.shape[2]);
            }
            relu_backward(&cache.pre[i].data, &mut dcur.data);
            let (gw, gb) = {
                let (a, b) = conv_grads.split_at_mut(2 * i + 1);
                (&mut a[2 * i], &mut b[0])
            };
            dcur = self.convs[i].backward(&cache.inputs[i], &dcur, gw, gb);
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for conv in &self.convs {
            out.push(&conv.w);
            out.push(&conv.b);
        }
        out.push(&self.head.w);
        out.push(&self.head.b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for conv in &mut self.convs {
            out.push(&mut conv.w);
            out.push(&mut conv.b);
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            out.push((format!("{prefix}.conv{i}.w"), &conv.w));
            out.push((format!("{prefix}.conv{i}.b"), &conv.b));
        }
        out.push((format!("{prefix}.head.w"), &self.head.w));
        out.push((format!("{prefix}.head.b"), &self.head.b));
        out
    }
}

/// One pre-activation residual block: out = conv2(relu(conv1(relu(x)))) + skip.
/// The skip is the identity, or a strided 1x1 conv on the pre-activated input
/// when the shape changes.
#[derive(Debug, Clone)]
struct PreactBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

struct BlockCache {
    x: Tensor,
    h: Tensor,      // relu(x)
    pre2: Tensor,   // conv1 output (pre-relu)
    h2: Tensor,     // relu(pre2)
}

impl PreactBlock {
    fn new<R: Rng>(cin: usize, cout: usize, stride: usize, rng: &mut R) -> PreactBlock {
        let skip = if cin != cout || stride != 1 {
            Some(Conv2d::new(cin, cout, 1, stride, rng))
        } else {
            None
        };
        PreactBlock {
            conv1: Conv2d::new(cin, cout, 3, stride, rng),
            conv2: Conv2d::new(cout, cout, 3, 1, rng),
            skip,
        }
    }

    fn forward(&self, x: &Tensor) -> (Tensor, BlockCache) {
        let mut h = x.clone();
        relu(&mut h.data);
        let pre2 = self.conv1.forward(&h);
        let mut h2 = pre2.clone();
        relu(&mut h2.data);
        let mut out = self.conv2.forward(&h2);
        match &self.skip {
            None => out.add_assign(x),
            Some(conv) => out.add_assign(&conv.forward(&h)),
        }
        (out, BlockCache { x: x.clone(), h, pre2, h2 })
    }

    /// grads: [conv1.w, conv1.b, conv2.w, conv2.b, (skip.w, skip.b)]
    fn backward(&self, cache: &BlockCache, dy: &Tensor, grads: &mut [Tensor]) -> Tensor {
        let (g1, rest) = grads.split_at_mut(2);
        let (g2, gskip) = rest.split_at_mut(2);
        let (g1w, g1b) = g1.split_at_mut(1);
        let (g2w, g2b) = g2.split_at_mut(1);

        let mut dh2 = self.conv2.backward(&cache.h2, dy, &mut g2w[0], &mut g2b[0]);
        relu_backward(&cache.pre2.data, &mut dh2.data);
        let mut dh = self.conv1.backward(&cache.h, &dh2, &mut g1w[0], &mut g1b[0]);

        let mut dx = match &self.skip {
            None => dy.clone(),
            Some(conv) => {
                let (gsw, gsb) = gskip.split_at_mut(1);
                let dskip_h = conv.backward(&cache.h, dy, &mut gsw[0], &mut gsb[0]);
                dh.add_assign(&dskip_h);
                Tensor::zeros(&[cache.x.shape[0], cache.x.shape[1], cache.x.shape[2]])
            }
        };
        relu_backward(&cache.x.data, &mut dh.data);
        dx.add_assign(&dh);
        dx
    }

    fn n_params(&self) -> usize {
        if self.skip.is_some() { 6 } else { 4 }
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.conv1.w, &self.conv1.b, &self.conv2.w, &self.conv2.b];
        if let Some(s) = &self.skip {
            out.push(&s.w);
            out.push(&s.b);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> =
            vec![&mut self.conv1.w, &mut self.conv1.b, &mut self.conv2.w, &mut self.conv2.b];
        if let Some(s) = &mut self.skip {
            out.push(&mut s.w);
            out.push(&mut s.b);
        }
        out
    }
}

/// Pre-activated residual network, 18 conv layers: stem, then stages of two
/// blocks at widths 64/128/256/512, global average pool. The pooled width is
/// the feature width (512), so no extra head is needed at reference scale.
#[derive(Debug, Clone)]
pub struct PreactResnet {
    stem: Conv2d,
    blocks: Vec<PreactBlock>,
    head: Option<Linear>,
    gap_dim: usize,
}

pub struct ResnetCache {
    x: Tensor,
    block_caches: Vec<BlockCache>,
    final_pre: Tensor,
    gap_out: Vec<f64>,
}

impl PreactResnet {
    pub fn new<R: Rng>(feature_dim: usize, rng: &mut R) -> PreactResnet {
        let widths = [64usize, 128, 256, 512];
        let stem = Conv2d::new(3, widths[0], 3, 1, rng);
        let mut blocks = Vec::new();
        let mut cin = widths[0];
        for (s, &wd) in widths.iter().enumerate() {
            let stride = if s == 0 { 1 } else { 2 };
            blocks.push(PreactBlock::new(cin, wd, stride, rng));
            blocks.push(PreactBlock::new(wd, wd, 1, rng));
            cin = wd;
        }
        let head = if cin == feature_dim { None } else { Some(Linear::new(cin, feature_dim, rng)) };
        PreactResnet { stem, blocks, head, gap_dim: cin }
    }

    pub fn feature_dim(&self) -> usize {
        match &self.head {
            Some(h) => h.w.shape[0],
            None => self.gap_dim,
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Vec<f64>, ResnetCache) {
        let mut cur = self.stem.forward(x);
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&cur);
            block_caches.push(cache);
            cur = next;
        }
        let final_pre = cur.clone();
        relu(&mut cur.data);
        let gap_out = global_avg_pool(&cur);
        let feat = match &self.head {
            Some(h) => h.forward(&gap_out),
            None => gap_out.clone(),
        };
        (feat, ResnetCache { x: x.clone(), block_caches, final_pre, gap_out })
    }

    pub fn backward(&self, cache: &ResnetCache, dfeat: &[f64], grads: &mut [Tensor]) {
        debug_assert_eq!(grads.len(), self.params().len());
        let (stem_grads, rest) = grads.split_at_mut(2);
        let mut offset = 0;
        let mut block_slices: Vec<&mut [Tensor]> = Vec::new();
        let mut remaining = rest;
        for block in &self.blocks {
            let (here, after) = remaining.split_at_mut(block.n_params());
            block_slices.push(here);
            remaining = after;
            offset += block.n_params();
        }
        let _ = offset;
        let head_grads = remaining;

        let dgap = match &self.head {
            Some(h) => {
                let (gw, gb) = head_grads.split_at_mut(1);
                h.backward(&cache.gap_out, dfeat, &mut gw[0], &mut gb[0])
            }
            None => dfeat.to_vec(),
        };
        let (c, hh, ww) = (
            cache.final_pre.shape[0],
            cache.final_pre.shape[1],
            cache.final_pre.shape[2],
        );
        let mut dcur = global_avg_pool_backward(&dgap, c, hh, ww);
        relu_backward(&cache.final_pre.data, &mut dcur.data);

        for (i, block) in self.blocks.iter().enumerate().rev() {
            dcur = block.backward(&cache.block_caches[i], &dcur, block_slices[i]);
        }
        let (gw, gb) = stem_grads.split_at_mut(1);
        let _ = self.stem.backward(&cache.x, &dcur, &mut gw[0], &mut gb[0]);
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.stem.w, &self.stem.b];
        for block in &self.blocks {
            out.extend(block.params());
        }
        if let Some(h) = &self.head {
            out.push(&h.w);
            out.push(&h.b);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.stem.w, &mut self.stem.b];
        for block in &mut self.blocks {
            out.extend(block.params_mut());
        }
        if let Some(h) = &mut self.head {
            out.push(&mut h.w);
            out.push(&mut h.b);
        }
        out
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            (format!("{prefix}.stem.w"), &self.stem.w),
            (format!("{prefix}.stem.b"), &self.stem.b),
        ];
        for (i, block) in self.blocks.iter().enumerate() {
            out.push((format!("{prefix}.block{i}.conv1.w"), &block.conv1.w));
            out.push((format!("{prefix}.block{i}.conv1.b"), &block.conv1.b));
            out.push((format!("{prefix}.block{i}.conv2.w"), &block.conv2.w));
            out.push((format!("{prefix}.block{i}.conv2.b"), &block.conv2.b));
            if let Some(s) = &block.skip {
                out.push((format!("{prefix}.block{i}.skip.w"), &s.w));
                out.push((format!("{prefix}.block{i}.skip.b"), &s.b));
            }
        }
        if let Some(h) = &self.head {
            out.push((format!("{prefix}.head.w"), &h.w));
            out.push((format!("{prefix}.head.b"), &h.b));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    fn random_input<R: Rng>(side: usize, rng: &mut R) -> Tensor {
        let mut x = Tensor::zeros(&[3, side, side]);
        for v in &mut x.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        x
    }

    #[test]
    fn small4_shapes_and_determinism() {
        let mut rng = derive_rng(0, "enc", &[]);
        let enc = Small4::new([4, 8, 8, 16], 32, &mut rng);
        let x = random_input(32, &mut rng);
        let (f1, _) = enc.forward(&x);
        let (f2, _) = enc.forward(&x);
        assert_eq!(f1.len(), 32);
        assert_eq!(f1, f2);
    }

    #[test]
    fn small4_backward_matches_finite_differences() {
        let mut rng = derive_rng(1, "enc", &[]);
        let mut enc = Small4::new([2, 2, 3, 3], 4, &mut rng);
        let x = random_input(8, &mut rng);
        let dfeat = vec![0.7, -0.3, 0.1, 0.9];

        let (_, cache) = enc.forward(&x);
        let mut grads: Vec<Tensor> = enc.params().iter().map(|p| p.zeros_like()).collect();
        enc.backward(&cache, &dfeat, &mut grads);

        let h = 1e-6;
        let n_params = enc.params().len();
        for pi in 0..n_params {
            let plen = enc.params()[pi].len();
            for ei in [0, plen / 2, plen - 1] {
                let orig = enc.params()[pi].data[ei];
                enc.params_mut()[pi].data[ei] = orig + h;
                let up: f64 = enc.forward(&x).0.iter().zip(&dfeat).map(|(a, b)| a * b).sum();
                enc.params_mut()[pi].data[ei] = orig - h;
                let dn: f64 = enc.forward(&x).0.iter().zip(&dfeat).map(|(a, b)| a * b).sum();
                enc.params_mut()[pi].data[ei] = orig;
                let num = (up - dn) / (2.0 * h);
                let ana = grads[pi].data[ei];
                let denom = num.abs().max(ana.abs()).max(1e-3);
                assert!(
                    ((num - ana) / denom).abs() < 1e-5,
                    "param {pi}[{ei}]: numeric {num} vs analytic {ana}"
                );
            }
        }
    }

    #[test]
    fn resnet_backward_matches_finite_differences_on_sampled_params() {
        let mut rng = derive_rng(2, "resnet", &[]);
        let mut enc = PreactResnet::new(512, &mut rng);
        let x = random_input(8, &mut rng);
        let dfeat: Vec<f64> = (0..512).map(|i| ((i % 13) as f64 - 6.0) / 20.0).collect();

        let (_, cache) = enc.forward(&x);
        let mut grads: Vec<Tensor> = enc.params().iter().map(|p| p.zeros_like()).collect();
        enc.backward(&cache, &dfeat, &mut grads);

        let h = 1e-5;
        // Sample a few parameters across the depth.
        let n_params = enc.params().len();
        for pi in [0usize, 3, n_params / 2, n_params - 2, n_params - 1] {
            let plen = enc.params()[pi].len();
            let ei = plen / 3;
            let orig = enc.params()[pi].data[ei];
            enc.params_mut()[pi].data[ei] = orig + h;
            let up: f64 = enc.forward(&x).0.iter().zip(&dfeat).map(|(a, b)| a * b).sum();
            enc.params_mut()[pi].data[ei] = orig - h;
            let dn: f64 = enc.forward(&x).0.iter().zip(&dfeat).map(|(a, b)| a * b).sum();
            enc.params_mut()[pi].data[ei] = orig;
            let num = (up - dn) / (2.0 * h);
            let ana = grads[pi].data[ei];
            let denom = num.abs().max(ana.abs()).max(1e-3);
            assert!(
                ((num - ana) / denom).abs() < 1e-4,
                "param {pi}[{ei}]: numeric {num} vs analytic {ana}"
            );
        }
        assert_eq!(enc.feature_dim(), 512);
    }
}
