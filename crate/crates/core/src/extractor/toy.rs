//! A small fixed-seed convolutional feature extractor.
//!
//! Three non-overlapping strided convolutions with ReLU (kernel = stride =
//! 4, 2, 2), giving taps `layer1`..`layer3` at input strides 4, 8 and 16. It
//! needs no model assets, so the whole pipeline runs anywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RawOutput;
use crate::error::{Result, SpadeError};
use crate::types::ImageTensor;

pub const TOY_LAYERS: [&str; 3] = ["layer1", "layer2", "layer3"];
const CHANNELS: [usize; 4] = [3, 16, 32, 64];
const KERNELS: [usize; 3] = [4, 2, 2];

/// A `kernel × kernel` convolution with stride equal to its kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// Layout `[out][in][ky][kx]`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }

    /// Convolve + ReLU over a `in_channels × h × w` tensor.
    fn forward(&self, input: &[f32], h: usize, w: usize) -> (usize, usize, Vec<f32>) {
        let k = self.kernel;
        let (oh, ow) = (h / k, w / k);
        let mut out = vec![0f32; self.out_channels * oh * ow];
        let mut patch = vec![0f32; self.in_channels * k * k];
        for y in 0..oh {
            for x in 0..ow {
                for i in 0..self.in_channels {
                    for ky in 0..k {
                        let src = (i * h + y * k + ky) * w + x * k;
                        patch[(i * k + ky) * k..(i * k + ky + 1) * k]
                            .copy_from_slice(&input[src..src + k]);
                    }
                }
                for o in 0..self.out_channels {
                    let wrow = &self.weights[o * patch.len()..(o + 1) * patch.len()];
                    let mut acc = self.bias[o] as f64;
                    for (&a, &b) in wrow.iter().zip(&patch) {
                        acc += a as f64 * b as f64;
                    }
                    out[(o * oh + y) * ow + x] = acc.max(0.0) as f32;
                }
            }
        }
        (oh, ow, out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyNetwork {
    layers: Vec<ConvLayer>,
}

impl ToyNetwork {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..3)
            .map(|l| {
                let (cin, cout, k) = (CHANNELS[l], CHANNELS[l + 1], KERNELS[l]);
                let fan_in = (cin * k * k) as f32;
                let bound = (6.0 / fan_in).sqrt();
                let weights = (0..cout * cin * k * k)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                let bias = (0..cout).map(|_| rng.random_range(-0.1f32..0.1)).collect();
                ConvLayer {
                    name: TOY_LAYERS[l].to_string(),
                    in_channels: cin,
                    out_channels: cout,
                    kernel: k,
                    weights,
                    bias,
                }
            })
            .collect();
        ToyNetwork { layers }
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub(crate) fn run(&self, image: &ImageTensor) -> Result<Vec<RawOutput>> {
        let (h, w) = image.shape();
        let total_stride: usize = KERNELS.iter().product();
        if h < total_stride || w < total_stride {
            return Err(SpadeError::Shape(format!(
                "toy backend needs at least {total_stride}x{total_stride} input, got {h}x{w}"
            )));
        }
        // grayscale inputs are broadcast to three channels
        let input: Vec<f32> = if image.channels() == 3 {
            image.data().to_vec()
        } else {
            image.data().repeat(3)
        };
        let mut outputs = Vec::with_capacity(self.layers.len());
        let (mut cur, mut ch, mut cw) = (input, h, w);
        for layer in &self.layers {
            let (oh, ow, out) = layer.forward(&cur, ch, cw);
            outputs.push(RawOutput {
                name: layer.name.clone(),
                shape: [layer.out_channels, oh, ow],
                data: out.clone(),
            });
            (cur, ch, cw) = (out, oh, ow);
        }
        Ok(outputs)
    }
}
