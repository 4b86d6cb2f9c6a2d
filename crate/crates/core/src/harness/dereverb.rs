//! Waveform-in, waveform-out dereverberation for every evaluated method.

use std::fmt;
use std::path::Path;

use super::config::ModelKind;
use crate::error::{Error, Result};
use crate::features::{
    invert_logmel, istft, resize_back, resize_time, stft, to_logmel, MelFilterbank, MelImage, N_FFT, N_MELS,
    TARGET_FRAMES,
};
use crate::nnet::{load_checkpoint, Module, Tensor4, UNet};
use crate::signal::AudioSignal;
use crate::wpe::{dereverb_signal, WpeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// STFT analysis and synthesis only; reported as "reverberant".
    Passthrough,
    FdNdlp,
    Neural(ModelKind),
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "reverberant" | "passthrough" => Ok(Method::Passthrough),
            "fd-ndlp" | "wpe" => Ok(Method::FdNdlp),
            other => ModelKind::parse(other)
                .map(Method::Neural)
                .map_err(|_| Error::Config(format!("unknown method {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Passthrough => "reverberant",
            Method::FdNdlp => "fd-ndlp",
            Method::Neural(m) => m.name(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A ready-to-run method. Cloning is cheap enough to give each worker its own copy.
#[derive(Debug, Clone)]
pub struct Dereverberator {
    method: Method,
    net: Option<UNet>,
    fb: MelFilterbank,
    wpe: WpeConfig,
}

impl Dereverberator {
    /// Neural methods need a checkpoint whose architecture matches the method.
    pub fn new(method: Method, checkpoint: Option<&Path>) -> Result<Self> {
        let net = match method {
            Method::Neural(kind) => {
                let path = checkpoint
                    .ok_or_else(|| Error::Config(format!("method {method} needs a checkpoint")))?;
                if !path.exists() {
                    return Err(Error::Config(format!("checkpoint {} not found", path.display())));
                }
                let (net, _) = load_checkpoint(path)?;
                if net.config.ls_skip != (kind == ModelKind::LsUnet) {
                    return Err(Error::Config(format!(
                        "checkpoint {} does not hold a {kind} network",
                        path.display()
                    )));
                }
                Some(net)
            }
            _ => None,
        };
        Ok(Self {
            method,
            net,
            fb: MelFilterbank::new(N_FFT, N_MELS, crate::signal::DEFAULT_SAMPLE_RATE)?,
            wpe: WpeConfig::default(),
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Output has exactly the input length.
    pub fn process(&mut self, x: &AudioSignal) -> Result<AudioSignal> {
        let len = x.len();
        let y = match self.method {
            Method::Passthrough => istft(&stft(x)?)?,
            Method::FdNdlp => dereverb_signal(x, &self.wpe)?,
            Method::Neural(_) => {
                let net = self.net.as_mut().expect("neural method holds a network");
                let spec = stft(x)?;
                let img = to_logmel(&spec, &self.fb)?;
                let out = enhance_image(net, &resize_time(&img, TARGET_FRAMES)?)?;
                invert_logmel(&resize_back(&out, img.frames)?, &spec, &self.fb)?
            }
        };
        Ok(y.fit_to(len))
    }
}

/// Runs the network on one normalized image; the output is clamped back into dB range.
pub fn enhance_image(net: &mut UNet, img: &MelImage) -> Result<MelImage> {
    let x = Tensor4::new([1, 1, img.n_mels, img.frames], img.normalized())?;
    let y = net.forward(&x, false)?;
    MelImage::from_normalized(img.n_mels, img.frames, &y.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{save_checkpoint, UNetConfig};
    use crate::synth::SpeechLike;

    #[test]
    fn names_round_trip() {
        for m in [
            Method::Passthrough,
            Method::FdNdlp,
            Method::Neural(ModelKind::Unet),
            Method::Neural(ModelKind::LsUnet),
        ] {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("gan").is_err());
    }

    #[test]
    fn passthrough_reproduces_input() {
        let x = SpeechLike::default().generate(2);
        let y = Dereverberator::new(Method::Passthrough, None).unwrap().process(&x).unwrap();
        assert_eq!(y.len(), x.len());
        let err = x.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn neural_methods_need_a_matching_checkpoint() {
        assert!(Dereverberator::new(Method::Neural(ModelKind::Unet), None).is_err());
        let d = tempfile::tempdir().unwrap();
        let missing = d.path().join("none.lsun");
        assert!(Dereverberator::new(Method::Neural(ModelKind::Unet), Some(&missing)).is_err());

        let path = d.path().join("ls.lsun");
        let cfg = UNetConfig { depth: 2, base_channels: 4, ..UNetConfig::ls_unet() };
        save_checkpoint(&path, &mut UNet::new(cfg, 1).unwrap(), None).unwrap();
        assert!(Dereverberator::new(Method::Neural(ModelKind::Unet), Some(&path)).is_err());

        // The zero-initialized head passes the image through, so the output is
        // the Mel-inverted input at the same length.
        let mut ls = Dereverberator::new(Method::Neural(ModelKind::LsUnet), Some(&path)).unwrap();
        let x = SpeechLike::default().generate(4);
        let y = ls.process(&x).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(y.samples.iter().all(|v| v.is_finite()));
        assert!(y.rms() > 0.1 * x.rms());
    }
}
