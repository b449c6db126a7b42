use std::path::Path;

use super::{AudioClip, AudioError};

/// Reads a PCM WAV file (16-bit integer or 32-bit float). Multi-channel
/// audio is downmixed to mono by averaging the scaled channel samples;
/// integer samples are scaled to [-1, 1) by 1 / 2^15.
pub fn read_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(AudioError::CorruptHeader(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(AudioError::UnsupportedFormat(format!(
                "{}: {bits}-bit {fmt:?} (expected 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    if interleaved.is_empty() {
        return Err(AudioError::EmptyAudio(path.display().to_string()));
    }
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Writes a mono clip as 16-bit PCM. Samples are quantized by rounding
/// `x * 2^15` and clamping to the i16 range.
pub fn write_wav_16bit(clip: &AudioClip, path: &Path) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| map_hound(path, e))?;
    for &s in &clip.samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))?;
    Ok(())
}

fn map_hound(path: &Path, e: hound::Error) -> AudioError {
    let at = path.display();
    match e {
        hound::Error::IoError(io) => AudioError::Io(io),
        hound::Error::FormatError(msg) => AudioError::CorruptHeader(format!("{at}: {msg}")),
        hound::Error::Unsupported => AudioError::UnsupportedFormat(format!("{at}: unsupported codec")),
        other => AudioError::CorruptHeader(format!("{at}: {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("auscult-wav-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn zero_clip_roundtrip() {
        let path = tmp("zeros.wav");
        let clip = AudioClip::new(vec![0.0; 16_000], 16_000);
        write_wav_16bit(&clip, &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.samples.len(), 16_000);
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn sixteen_bit_scaling_is_two_pow_fifteen() {
        let path = tmp("scale.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(-32768i16).unwrap();
        w.write_sample(16384i16).unwrap();
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples, vec![-1.0, 0.5]);
    }

    #[test]
    fn stereo_downmix_averages_channels() {
        let path = tmp("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0.2f32).unwrap();
        w.write_sample(0.6f32).unwrap();
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples.len(), 1);
        assert!((clip.samples[0] - 0.4).abs() < 1e-7);
    }

    #[test]
    fn roundtrip_error_within_half_lsb() {
        let path = tmp("roundtrip.wav");
        let samples: Vec<f32> = (0..1000)
            .map(|i| ((i as f32) * 0.013).sin() * 0.95)
            .collect();
        let clip = AudioClip::new(samples.clone(), 16_000);
        write_wav_16bit(&clip, &path).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn truncated_file_is_reported() {
        let path = tmp("garbage.wav");
        std::fs::write(&path, b"RIFFxxxxWAVE").unwrap();
        match read_wav(&path) {
            Err(AudioError::CorruptHeader(_)) | Err(AudioError::Io(_)) | Err(AudioError::UnsupportedFormat(_)) => {}
            other => panic!("expected decode error, got {other:?}"),
        }
    }
}
