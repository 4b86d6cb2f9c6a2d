//! Encoder/decoder networks on normalized log-Mel images: the baseline U-net
//! that maps reverberant to clean directly, and the late-suppression variant that
//! predicts a residual and subtracts it from its input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conv::ConvGeom;
use super::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, LeakyRelu, Module, Param};
use super::tensor::{concat_channels, split_channels, Tensor4};
use crate::error::{Error, Result};

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const CONV_PAD: usize = 1;
/// Normalized value of the -80 dB floor, used to pad the time axis.
pub const PAD_VALUE: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub leaky_slope: f64,
    /// Output `x - r(x)` instead of `r(x)`.
    pub ls_skip: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 16,
            leaky_slope: 0.2,
            ls_skip: false,
        }
    }
}

impl UNetConfig {
    pub fn unet() -> Self {
        Self::default()
    }

    pub fn ls_unet() -> Self {
        Self {
            ls_skip: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(Error::Config("U-net depth and base channels must be at least 1".into()));
        }
        if self.depth > 12 {
            return Err(Error::Config(format!("U-net depth {} is unreasonably large", self.depth)));
        }
        Ok(())
    }

    /// Channels produced by encoder level `i`.
    pub fn level_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    pub fn multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    act: LeakyRelu,
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    tconv: ConvTranspose2d,
    bn: BatchNorm2d,
    act: LeakyRelu,
}

#[derive(Debug, Clone, Copy)]
struct PadInfo {
    left: usize,
    width: usize,
}

#[derive(Debug, Clone)]
pub struct UNet {
    pub config: UNetConfig,
    enc: Vec<EncoderBlock>,
    dec: Vec<DecoderBlock>,
    head: Conv2d,
    pad: Option<PadInfo>,
}

fn geom(in_channels: usize, out_channels: usize) -> ConvGeom {
    ConvGeom {
        in_channels,
        out_channels,
        kernel: KERNEL,
        stride: STRIDE,
        pad: CONV_PAD,
    }
}

impl UNet {
    /// Seeded Kaiming-uniform initialization; the late-suppression variant starts
    /// with a zero output layer, i.e. as the identity map.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.depth;
        let enc = (0..d)
            .map(|i| {
                let cin = if i == 0 { 1 } else { config.level_channels(i - 1) };
                let prefix = format!("enc{i}");
                EncoderBlock {
                    conv: Conv2d::new(&format!("{prefix}.conv"), geom(cin, config.level_channels(i)), config.leaky_slope, &mut rng),
                    bn: (i > 0).then(|| BatchNorm2d::new(&format!("{prefix}.bn"), config.level_channels(i))),
                    act: LeakyRelu::new(config.leaky_slope),
                }
            })
            .collect();
        // Built top-down (deepest first) so initialization order follows the data flow.
        let mut dec: Vec<DecoderBlock> = (0..d)
            .rev()
            .map(|j| {
                let cin = if j == d - 1 { config.level_channels(j) } else { 2 * config.level_channels(j) };
                let cout = if j == 0 { config.base_channels } else { config.level_channels(j - 1) };
                let prefix = format!("dec{j}");
                DecoderBlock {
                    tconv: ConvTranspose2d::new(&format!("{prefix}.tconv"), geom(cin, cout), 0.0, &mut rng),
                    bn: BatchNorm2d::new(&format!("{prefix}.bn"), cout),
                    act: LeakyRelu::relu(),
                }
            })
            .collect();
        dec.reverse();
        let mut head = Conv2d::new(
            "head",
            ConvGeom {
                in_channels: config.base_channels,
                out_channels: 1,
                kernel: 1,
                stride: 1,
                pad: 0,
            },
            1.0,
            &mut rng,
        );
        if config.ls_skip {
            head.weight.data.fill(0.0);
        }
        Ok(Self {
            config,
            enc,
            dec,
            head,
            pad: None,
        })
    }

    /// Zeroes the output layer.
    pub fn zero_head(&mut self) {
        self.head.weight.data.fill(0.0);
        self.head.bias.data.fill(0.0);
    }

    pub fn num_params(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.data.len()).sum()
    }

    /// Batch-norm running statistics, as `(name, buffer)` pairs in a fixed order.
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::new();
        let bns = self
            .enc
            .iter_mut()
            .filter_map(|b| b.bn.as_mut())
            .chain(self.dec.iter_mut().map(|b| &mut b.bn));
        for bn in bns {
            let prefix = bn.prefix().to_string();
            out.push((format!("{prefix}.running_mean"), &mut bn.running_mean));
            out.push((format!("{prefix}.running_var"), &mut bn.running_var));
        }
        out
    }

    /// Padded width for an input of width `w`.
    pub fn padded_width(&self, w: usize) -> usize {
        w.div_ceil(self.config.multiple()) * self.config.multiple()
    }

    fn pad_input(&self, x: &Tensor4) -> Result<(Tensor4, PadInfo)> {
        let [n, c, h, w] = x.dims;
        if c != 1 {
            return Err(Error::Shape(format!("U-net takes 1 input channel, got {c}")));
        }
        let m = self.config.multiple();
        if h % m != 0 {
            return Err(Error::Config(format!(
                "input height {h} is not divisible by 2^depth = {m}"
            )));
        }
        let wp = self.padded_width(w);
        let left = (wp - w) / 2;
        let info = PadInfo { left, width: w };
        if wp == w {
            return Ok((x.clone(), info));
        }
        let mut out = Tensor4::filled([n, 1, h, wp], PAD_VALUE);
        for i in 0..n {
            for y in 0..h {
                let src = &x.data[(i * h + y) * w..][..w];
                out.data[(i * h + y) * wp + left..][..w].copy_from_slice(src);
            }
        }
        Ok((out, info))
    }

    fn crop(t: &Tensor4, info: PadInfo) -> Tensor4 {
        let [n, c, h, wp] = t.dims;
        if wp == info.width {
            return t.clone();
        }
        let w = info.width;
        let mut data = Vec::with_capacity(n * c * h * w);
        for row in t.data.chunks(wp) {
            data.extend_from_slice(&row[info.left..info.left + w]);
        }
        Tensor4::new([n, c, h, w], data).expect("crop dims")
    }

    fn uncrop(t: &Tensor4, info: PadInfo, wp: usize) -> Tensor4 {
        let [n, c, h, w] = t.dims;
        if wp == w {
            return t.clone();
        }
        let mut out = Tensor4::zeros([n, c, h, wp]);
        for (dst, src) in out.data.chunks_mut(wp).zip(t.data.chunks(w)) {
            dst[info.left..info.left + w].copy_from_slice(src);
        }
        out
    }

    /// Residual `r(x)` on the padded grid.
    fn residual(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4> {
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut h = x.clone();
        for b in &mut self.enc {
            h = b.conv.forward(&h, train)?;
            if let Some(bn) = &mut b.bn {
                h = bn.forward(&h, train)?;
            }
            h = b.act.forward(&h, train)?;
            skips.push(h.clone());
        }
        let d = self.dec.len();
        let mut u = skips[d - 1].clone();
        for j in (0..d).rev() {
            let input = if j == d - 1 { u } else { concat_channels(&u, &skips[j])? };
            let b = &mut self.dec[j];
            u = b.tconv.forward(&input, train)?;
            u = b.bn.forward(&u, train)?;
            u = b.act.forward(&u, train)?;
        }
        let r = self.head.forward(&u, train)?;
        r.debug_check_finite("U-net forward");
        Ok(r)
    }
}

impl Module for UNet {
    fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4> {
        let (xp, info) = self.pad_input(x)?;
        let r = Self::crop(&self.residual(&xp, train)?, info);
        self.pad = Some(info);
        if self.config.ls_skip {
            let mut out = x.clone();
            out.data.iter_mut().zip(&r.data).for_each(|(o, v)| *o -= v);
            Ok(out)
        } else {
            Ok(r)
        }
    }

    fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let info = self
            .pad
            .ok_or_else(|| Error::Shape("U-net: backward called before forward".into()))?;
        let wp = self.padded_width(info.width);
        let mut dr = Self::uncrop(dy, info, wp);
        if self.config.ls_skip {
            dr.data.iter_mut().for_each(|v| *v = -*v);
        }
        let mut du = self.head.backward(&dr)?;
        let d = self.dec.len();
        let mut dskip: Vec<Option<Tensor4>> = vec![None; d];
        for j in 0..d {
            let b = &mut self.dec[j];
            let g = b.act.backward(&du)?;
            let g = b.bn.backward(&g)?;
            let g = b.tconv.backward(&g)?;
            if j == d - 1 {
                dskip[j] = Some(g);
            } else {
                let (up, skip) = split_channels(&g, self.config.level_channels(j));
                dskip[j] = Some(skip);
                du = up;
            }
        }
        let mut dh: Option<Tensor4> = None;
        for i in (0..d).rev() {
            let mut g = dskip[i].take().expect("every level has a skip gradient");
            if let Some(from_below) = dh.take() {
                g.data.iter_mut().zip(&from_below.data).for_each(|(a, v)| *a += v);
            }
            let b = &mut self.enc[i];
            g = b.act.backward(&g)?;
            if let Some(bn) = &mut b.bn {
                g = bn.backward(&g)?;
            }
            dh = Some(b.conv.backward(&g)?);
        }
        let mut dx = Self::crop(&dh.expect("depth >= 1"), info);
        if self.config.ls_skip {
            dx.data.iter_mut().zip(&dy.data).for_each(|(a, v)| *a += v);
        }
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        for b in &mut self.enc {
            out.extend(b.conv.params_mut());
            if let Some(bn) = &mut b.bn {
                out.extend(bn.params_mut());
            }
        }
        for b in &mut self.dec {
            out.extend(b.tconv.params_mut());
            out.extend(b.bn.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }
}
