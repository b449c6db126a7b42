use super::AudioClip;

const TAPS: usize = 64;
const KAISER_BETA: f64 = 8.6;

/// Band-limited sample-rate conversion with a 64-tap Kaiser-windowed sinc
/// kernel. Identical rates return the clip unchanged. Output length is
/// `round(n * target / source)`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    assert!(target_rate > 0, "target rate must be positive");
    if clip.sample_rate == target_rate {
        return clip.clone();
    }
    let src = clip.sample_rate as f64;
    let dst = target_rate as f64;
    let ratio = dst / src;
    let out_len = ((clip.samples.len() as f64) * ratio).round() as usize;
    // cutoff relative to the input Nyquist: 1 when upsampling, ratio when down
    let cutoff = ratio.min(1.0);
    let half = (TAPS / 2) as isize;
    let i0_beta = bessel_i0(KAISER_BETA);
    let n = clip.samples.len() as isize;

    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        let t = m as f64 / ratio; // center position in input samples
        let j0 = t.floor() as isize - half + 1;
        let mut acc = 0.0f64;
        let mut wsum = 0.0f64;
        for j in j0..j0 + TAPS as isize {
            let d = j as f64 - t;
            let u = d / half as f64;
            if u.abs() > 1.0 {
                continue;
            }
            let w = bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / i0_beta;
            let h = cutoff * sinc(cutoff * d) * w;
            wsum += h;
            if j >= 0 && j < n {
                acc += clip.samples[j as usize] as f64 * h;
            }
        }
        out.push(if wsum != 0.0 { (acc / wsum) as f32 } else { 0.0 });
    }
    AudioClip {
        samples: out,
        sample_rate: target_rate,
        silent_warning: clip.silent_warning,
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_x = x / 2.0;
    for k in 1..=30 {
        term *= (half_x / k as f64) * (half_x / k as f64);
        sum += term;
        if term < sum * 1e-16 {
            break;
        }
    }
    sum
}
