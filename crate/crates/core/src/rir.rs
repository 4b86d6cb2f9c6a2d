//! Shoebox room impulse responses by the image-source method, and reverberation
//! time measurement by Schroeder backward integration.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::signal::{AudioSignal, Rir, DEFAULT_SAMPLE_RATE};
use crate::wav::{self, WavEncoding};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Sabine constant, `24 ln(10) / c` rounded as usually quoted.
const SABINE: f64 = 0.161;
const MAX_BETA: f64 = 0.9999;

/// Width of the windowed-sinc used to place fractional-delay impulses.
const SINC_TAPS: usize = 81;

/// Geometry and acoustics of a rectangular room.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    /// Width, length and depth in meters.
    pub dims: [f64; 3],
    pub src_pos: [f64; 3],
    pub mic_pos: [f64; 3],
    /// Target reverberation time in seconds.
    pub t60: f64,
    pub fs: u32,
    /// Number of output taps.
    pub rir_length: usize,
}

impl RoomSpec {
    /// The 5 x 4 x 6 m evaluation room with fixed source and microphone.
    pub fn evaluation_room(t60: f64) -> Self {
        let fs = DEFAULT_SAMPLE_RATE;
        Self {
            dims: [5.0, 4.0, 6.0],
            src_pos: [2.0, 1.5, 2.0],
            mic_pos: [3.5, 2.5, 2.0],
            t60,
            fs,
            rir_length: (t60 * fs as f64).ceil() as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            let d = self.dims[axis];
            if !(d > 0.0) {
                return Err(Error::InvalidArgument(format!("room dimension {axis} must be positive")));
            }
            for (name, p) in [("source", self.src_pos), ("microphone", self.mic_pos)] {
                if !(p[axis] > 0.0 && p[axis] < d) {
                    return Err(Error::InvalidArgument(format!(
                        "{name} position {:?} outside room {:?}",
                        p, self.dims
                    )));
                }
            }
        }
        if self.src_pos == self.mic_pos {
            return Err(Error::InvalidArgument("source and microphone coincide".into()));
        }
        if !(self.t60 > 0.0) {
            return Err(Error::InvalidArgument(format!("t60 must be positive, got {}", self.t60)));
        }
        if self.fs == 0 || self.rir_length == 0 {
            return Err(Error::InvalidArgument("fs and rir_length must be positive".into()));
        }
        if (self.rir_length as f64) < self.t60 * self.fs as f64 {
            log::warn!(
                "rir_length {} is shorter than t60*fs = {:.0}; the decay will be truncated",
                self.rir_length,
                self.t60 * self.fs as f64
            );
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [w, l, d] = self.dims;
        2.0 * (w * l + w * d + l * d)
    }

    pub fn source_distance(&self) -> f64 {
        distance(self.src_pos, self.mic_pos)
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Uniform wall reflection coefficient from Sabine's formula.
pub fn beta_from_t60(room: &RoomSpec) -> Result<f64> {
    room.validate()?;
    let alpha = SABINE * room.volume() / (room.surface() * room.t60);
    if alpha >= 1.0 {
        return Err(Error::InfeasibleT60(format!(
            "t60 = {} s needs absorption {alpha:.3} >= 1 in a {:?} m room",
            room.t60, room.dims
        )));
    }
    Ok((1.0 - alpha).sqrt().clamp(0.0, MAX_BETA))
}

/// Image position offsets along one axis together with their wall-hit counts.
fn axis_images(src: f64, mic: f64, len: f64, reach: f64) -> Vec<(f64, u32)> {
    let n = (reach / (2.0 * len)).ceil() as i64 + 1;
    let mut out = Vec::new();
    for m in -n..=n {
        for q in 0..=1i64 {
            let pos = (1 - 2 * q) as f64 * src + 2.0 * m as f64 * len;
            let diff = pos - mic;
            if diff.abs() <= reach {
                let hits = ((m - q).abs() + m.abs()) as u32;
                out.push((diff, hits));
            }
        }
    }
    out
}

/// Hann-windowed sinc, evaluated at offset `t` samples from the true arrival.
fn windowed_sinc(t: f64) -> f64 {
    let half = SINC_TAPS as f64 / 2.0;
    if t.abs() >= half {
        return 0.0;
    }
    let window = 0.5 * (1.0 + (2.0 * PI * t / SINC_TAPS as f64).cos());
    let sinc = if t == 0.0 { 1.0 } else { (PI * t).sin() / (PI * t) };
    window * sinc
}

/// Knobs of the image-source generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsmOptions {
    /// Caps the total number of wall reflections per image; `None` keeps every image
    /// whose arrival falls within `rir_length`.
    pub max_order: Option<u32>,
    /// Allen & Berkley 100 Hz high-pass. Without it the dense late images pile up a
    /// low-frequency bias that stretches the measured decay.
    pub highpass: bool,
}

impl Default for IsmOptions {
    fn default() -> Self {
        Self {
            max_order: None,
            highpass: true,
        }
    }
}

impl IsmOptions {
    pub fn max_order(order: u32) -> Self {
        Self {
            max_order: Some(order),
            ..Self::default()
        }
    }
}

/// Image-source impulse response with Sabine-derived wall reflection.
pub fn image_source_rir(room: &RoomSpec, opts: &IsmOptions) -> Result<Rir> {
    let beta = beta_from_t60(room)?;
    image_source_rir_with_beta(room, beta, opts)
}

pub fn image_source_rir_with_beta(room: &RoomSpec, beta: f64, opts: &IsmOptions) -> Result<Rir> {
    let max_order = opts.max_order;
    room.validate()?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta {beta} outside [0, 1]")));
    }
    let fs = room.fs as f64;
    let samples_per_meter = fs / SPEED_OF_SOUND;
    let half = (SINC_TAPS / 2) as i64;
    let len = room.rir_length as i64;
    let reach = (room.rir_length as f64 + half as f64) / samples_per_meter;

    let direct_delay = room.source_distance() * samples_per_meter;
    let direct_path_index = direct_delay.round() as usize;
    if direct_path_index >= room.rir_length {
        return Err(Error::InvalidArgument(format!(
            "direct path at sample {direct_path_index} beyond rir_length {}",
            room.rir_length
        )));
    }

    let axes: Vec<Vec<(f64, u32)>> = (0..3)
        .map(|a| axis_images(room.src_pos[a], room.mic_pos[a], room.dims[a], reach))
        .collect();
    let max_hits = axes.iter().map(|ax| ax.iter().map(|e| e.1).max().unwrap_or(0)).sum::<u32>();
    let beta_pow: Vec<f64> = (0..=max_hits).map(|k| beta.powi(k as i32)).collect();

    let mut taps = vec![0.0; room.rir_length];
    let reach2 = reach * reach;
    for &(dx, hx) in &axes[0] {
        for &(dy, hy) in &axes[1] {
            let dxy = dx * dx + dy * dy;
            if dxy > reach2 {
                continue;
            }
            for &(dz, hz) in &axes[2] {
                let d2 = dxy + dz * dz;
                if d2 > reach2 {
                    continue;
                }
                let order = hx + hy + hz;
                if max_order.is_some_and(|o| order > o) {
                    continue;
                }
                let gain = beta_pow[order as usize];
                if gain == 0.0 {
                    continue;
                }
                let d = d2.sqrt();
                let amp = gain / (4.0 * PI * d);
                let delay = d * samples_per_meter;
                let base = delay.floor() as i64;
                for k in -half..=half + 1 {
                    let idx = base + k;
                    if idx < 0 || idx >= len {
                        continue;
                    }
                    taps[idx as usize] += amp * windowed_sinc(idx as f64 - delay);
                }
            }
        }
    }
    if opts.highpass {
        highpass_100hz(&mut taps, fs);
    }
    Rir::new(taps, room.fs, direct_path_index)
}

/// Two-pole, two-zero 100 Hz high-pass from the original image method.
fn highpass_100hz(x: &mut [f64], fs: f64) {
    let w = 2.0 * PI * 100.0 / fs;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y0 = b1 * y1 + b2 * y2 + *v;
        *v = y0 + a1 * y1 + r1 * y2;
        y2 = y1;
        y1 = y0;
    }
}

/// Schroeder energy decay curve in dB relative to total energy.
pub fn energy_decay_curve(h: &Rir) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = h
        .taps
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.into_iter()
        .map(|e| {
            if total > 0.0 && e > 0.0 {
                10.0 * (e / total).log10()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Reverberation time from a least-squares fit of the decay curve between -5 and -25 dB,
/// extrapolated to 60 dB.
pub fn measure_t60(h: &Rir) -> Result<f64> {
    let edc = energy_decay_curve(h);
    let start = edc.iter().position(|&v| v <= -5.0);
    let end = edc.iter().position(|&v| v < -25.0);
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) if e > s + 2 && edc[e - 1] > -25.0 - 1.0 => (s, e),
        _ => {
            return Err(Error::DecayRange(
                "energy decay curve never spans -5 dB to -25 dB".into(),
            ))
        }
    };
    let fs = h.sample_rate as f64;
    let n = (end - start) as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in edc[start..end].iter().enumerate() {
        let t = (start + i) as f64 / fs;
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    if !(slope < 0.0) {
        return Err(Error::DecayRange(format!("non-decaying fit, slope {slope}")));
    }
    Ok(-60.0 / slope)
}

/// Sidecar metadata stored next to an RIR WAV.
#[derive(Debug, Clone, PartialEq)]
pub struct RirMetadata {
    pub room: RoomSpec,
    pub beta: f64,
    pub direct_path_index: usize,
}

pub fn sidecar_path(wav_path: &Path) -> PathBuf {
    wav_path.with_extension("txt")
}

/// Writes the RIR as float-32 WAV plus a `key = value` sidecar.
pub fn save_rir(path: impl AsRef<Path>, h: &Rir, meta: &RirMetadata) -> Result<()> {
    let path = path.as_ref();
    wav::write(
        path,
        &AudioSignal {
            samples: h.taps.clone(),
            sample_rate: h.sample_rate,
        },
        WavEncoding::Float32,
    )?;
    let r = &meta.room;
    let mut s = String::new();
    let v3 = |v: [f64; 3]| format!("{}, {}, {}", v[0], v[1], v[2]);
    let _ = writeln!(s, "dims = {}", v3(r.dims));
    let _ = writeln!(s, "src_pos = {}", v3(r.src_pos));
    let _ = writeln!(s, "mic_pos = {}", v3(r.mic_pos));
    let _ = writeln!(s, "t60 = {}", r.t60);
    let _ = writeln!(s, "fs = {}", r.fs);
    let _ = writeln!(s, "rir_length = {}", r.rir_length);
    let _ = writeln!(s, "beta = {}", meta.beta);
    let _ = writeln!(s, "direct_path_index = {}", meta.direct_path_index);
    std::fs::write(sidecar_path(path), s)?;
    Ok(())
}

/// Loads an RIR WAV. The direct path comes from the sidecar when present, else the peak tap.
pub fn load_rir(path: impl AsRef<Path>) -> Result<Rir> {
    let path = path.as_ref();
    let sig = wav::read(path)?;
    let sidecar = sidecar_path(path);
    let direct = if sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar)?;
        text.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == "direct_path_index")
            .map(|(_, v)| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::format(&sidecar, e.to_string()))
            })
            .transpose()?
    } else {
        None
    };
    match direct {
        Some(d) => Rir::new(sig.samples, sig.sample_rate, d),
        None => Rir::from_taps(sig.samples, sig.sample_rate),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sabine_hand_calculation() {
        // V = 120 m^3, S = 148 m^2, alpha = 0.161 * 120 / (148 * 0.5) = 0.261081...
        let beta = beta_from_t60(&RoomSpec::evaluation_room(0.5)).unwrap();
        assert!((beta - 0.859_603_931_423_605_7).abs() < 1e-12, "{beta}");
    }

    #[test]
    fn lossless_limit() {
        let beta = beta_from_t60(&RoomSpec::evaluation_room(1e9)).unwrap();
        assert!((beta - MAX_BETA).abs() < 1e-12);
    }

    #[test]
    fn infeasible_reverberation_time() {
        // A 0.5 m cube has V/S = 1/12, so Sabine needs alpha >= 1 once t60 <= 0.0134 s.
        let mut room = RoomSpec {
            dims: [0.5; 3],
            src_pos: [0.1, 0.1, 0.1],
            mic_pos: [0.4, 0.4, 0.4],
            t60: 0.01,
            fs: 16000,
            rir_length: 1000,
        };
        assert!(matches!(beta_from_t60(&room), Err(Error::InfeasibleT60(_))));
        room.t60 = 2.0;
        let beta = beta_from_t60(&room).unwrap();
        assert!((beta - (1.0 - 0.161 / 12.0 / 2.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn room_validation() {
        let mut room = RoomSpec::evaluation_room(0.5);
        room.src_pos = [6.0, 1.0, 1.0];
        assert!(room.validate().is_err());
        let mut room = RoomSpec::evaluation_room(0.5);
        room.mic_pos = room.src_pos;
        assert!(room.validate().is_err());
    }

    #[test]
    fn free_field_is_a_single_impulse() {
        // 343 m/s at 16 kHz: 0.686 m is exactly 32 samples.
        let room = RoomSpec {
            dims: [5.0, 4.0, 6.0],
            src_pos: [2.0, 2.0, 3.0],
            mic_pos: [2.686, 2.0, 3.0],
            t60: 0.4,
            fs: 16000,
            rir_length: 200,
        };
        let free = IsmOptions {
            max_order: Some(0),
            highpass: false,
        };
        let h = image_source_rir(&room, &free).unwrap();
        assert_eq!(h.direct_path_index, 32);
        let amp = 1.0 / (4.0 * PI * 0.686);
        for (i, &v) in h.taps.iter().enumerate() {
            let expect = if i == 32 { amp } else { 0.0 };
            assert!((v - expect).abs() < 1e-12, "tap {i}: {v}");
        }
        let all = IsmOptions {
            highpass: false,
            ..IsmOptions::default()
        };
        let zero_beta = image_source_rir_with_beta(&room, 0.0, &all).unwrap();
        assert_eq!(zero_beta.taps, h.taps);
    }

    #[test]
    fn fractional_free_field_keeps_unit_dc_gain() {
        let room = RoomSpec::evaluation_room(0.3);
        let free = IsmOptions {
            max_order: Some(0),
            highpass: false,
        };
        let h = image_source_rir(&room, &free).unwrap();
        let d = room.source_distance();
        let delay = d * 16000.0 / SPEED_OF_SOUND;
        let sum: f64 = h.taps.iter().sum();
        assert!((sum * 4.0 * PI * d - 1.0).abs() < 0.01);
        let peak = h
            .taps
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        assert_eq!(peak, delay.round() as usize);
        assert_eq!(h.direct_path_index, peak);
    }

    #[test]
    fn first_order_images_land_at_mirror_delays() {
        let room = RoomSpec {
            dims: [5.0, 4.0, 6.0],
            src_pos: [1.0, 1.5, 2.0],
            mic_pos: [3.0, 2.5, 4.5],
            t60: 0.5,
            fs: 16000,
            rir_length: 2000,
        };
        let beta = 0.8;
        let opts = |o| IsmOptions {
            max_order: Some(o),
            highpass: false,
        };
        let h0 = image_source_rir_with_beta(&room, beta, &opts(0)).unwrap();
        let h1 = image_source_rir_with_beta(&room, beta, &opts(1)).unwrap();
        let first: Vec<f64> = h1.taps.iter().zip(&h0.taps).map(|(a, b)| a - b).collect();

        // Mirror the source across each of the six walls by hand.
        let [sx, sy, sz] = room.src_pos;
        let [w, l, d] = room.dims;
        let images = [
            [-sx, sy, sz],
            [2.0 * w - sx, sy, sz],
            [sx, -sy, sz],
            [sx, 2.0 * l - sy, sz],
            [sx, sy, -sz],
            [sx, sy, 2.0 * d - sz],
        ];
        let mut expected = vec![0.0; room.rir_length];
        for img in images {
            let dist = distance(img, room.mic_pos);
            let delay = dist * 16000.0 / SPEED_OF_SOUND;
            let amp = beta / (4.0 * PI * dist);
            for (i, e) in expected.iter_mut().enumerate() {
                *e += amp * windowed_sinc(i as f64 - delay);
            }
            let k = delay.round() as usize;
            assert!(first[k].abs() > 0.3 * amp, "no energy near sample {k}");
        }
        for (i, (a, b)) in first.iter().zip(&expected).enumerate() {
            assert!((a - b).abs() < 1e-12, "tap {i}: {a} vs {b}");
        }
    }

    #[test]
    fn exponential_decay_measures_its_t60() {
        let fs = 16000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in [0.3, 0.6, 1.0] {
            let n = (1.2 * t * fs as f64) as usize;
            let smooth: Vec<f64> = (0..n)
                .map(|i| (-6.91 * i as f64 / fs as f64 / t).exp())
                .collect();
            let h = Rir::new(smooth, fs, 0).unwrap();
            let m = measure_t60(&h).unwrap();
            assert!((m - t).abs() < 0.05 * t, "smooth {t}: {m}");

            let noisy: Vec<f64> = (0..n)
                .map(|i| {
                    let s: f64 = rng.random_range(-1.0..1.0);
                    s * (-6.91 * i as f64 / fs as f64 / t).exp()
                })
                .collect();
            let h = Rir::from_taps(noisy, fs).unwrap();
            let m = measure_t60(&h).unwrap();
            assert!((m - t).abs() < 0.05 * t, "noisy {t}: {m}");
        }
    }

    #[test]
    fn single_impulse_has_no_decay_range() {
        let mut taps = vec![0.0; 1000];
        taps[10] = 1.0;
        let h = Rir::new(taps, 16000, 10).unwrap();
        assert!(matches!(measure_t60(&h), Err(Error::DecayRange(_))));
    }

    #[test]
    fn image_method_hits_requested_t60() {
        for t60 in [0.5, 0.8] {
            let h = image_source_rir(&RoomSpec::evaluation_room(t60), &IsmOptions::default()).unwrap();
            let m = measure_t60(&h).unwrap();
            assert!((m - t60).abs() <= 0.2 * t60, "requested {t60}, measured {m}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let room = RoomSpec::evaluation_room(0.3);
        assert_eq!(
            image_source_rir(&room, &IsmOptions::default()).unwrap(),
            image_source_rir(&room, &IsmOptions::default()).unwrap()
        );
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rir.wav");
        let room = RoomSpec::evaluation_room(0.3);
        let h = image_source_rir(&room, &IsmOptions::default()).unwrap();
        let meta = RirMetadata {
            beta: beta_from_t60(&room).unwrap(),
            direct_path_index: h.direct_path_index,
            room,
        };
        save_rir(&p, &h, &meta).unwrap();
        let back = load_rir(&p).unwrap();
        assert_eq!(back.direct_path_index, h.direct_path_index);
        assert_eq!(back.len(), h.len());
        let text = std::fs::read_to_string(sidecar_path(&p)).unwrap();
        assert!(text.contains("beta = "));
        assert!(text.contains("dims = 5, 4, 6"));
    }

    #[test]
    fn measured_t60_increases_with_requested_t60() {
        let measured: Vec<f64> = (2..=10)
            .map(|k| {
                let room = RoomSpec::evaluation_room(k as f64 / 10.0);
                let h = image_source_rir(&room, &IsmOptions::default()).unwrap();
                measure_t60(&h).unwrap()
            })
            .collect();
        for w in measured.windows(2) {
            assert!(w[1] > w[0], "{measured:?}");
        }
    }

    #[test]
    fn tail_envelope_decays() {
        let room = RoomSpec::evaluation_room(0.6);
        let h = image_source_rir(&room, &IsmOptions::default()).unwrap();
        let energy: f64 = h.taps.iter().map(|v| v * v).sum();
        assert!(energy.is_finite() && energy > 0.0);

        // 10 ms energy blocks from 50 ms after the direct path. Individual reflections
        // make block-to-block wiggles of a few dB, so check that no block exceeds an
        // earlier one and that the envelope 50 ms later is always lower.
        let start = split_index_for(&h, 50.0);
        let blocks: Vec<f64> = h.taps[start..]
            .chunks(160)
            .filter(|c| c.len() == 160)
            .map(|c| c.iter().map(|v| v * v).sum())
            .collect();
        let mut peak = blocks[0];
        for &b in &blocks[1..] {
            assert!(b <= peak * 1.0001);
            peak = peak.max(b);
        }
        for i in 0..blocks.len() - 5 {
            assert!(blocks[i + 5] < blocks[i], "block {i}");
        }
    }

    fn split_index_for(h: &Rir, ms: f64) -> usize {
        crate::signal::split_index(h, ms)
    }
}
