use super::{AudioClip, AudioError, SadConfig};

/// Removes low-energy segments.
///
/// Analysis windows of `frame_ms` are placed every `hop_ms`. A window is
/// silent when its log energy falls below the loudest window's log energy
/// plus `threshold_db`. A sample is dropped if any window covering it is
/// silent; remaining samples are concatenated in order, so the output is a
/// verbatim subsequence of the input. Fails with `AllSilent` when less than
/// `min_voiced_ms` survives (an all-zero clip always fails).
pub fn remove_silence(clip: &AudioClip, cfg: &SadConfig) -> Result<AudioClip, AudioError> {
    cfg.validate()?;
    let sr = clip.sample_rate as f64;
    let frame = ((cfg.frame_ms / 1000.0) * sr).round() as usize;
    let hop = ((cfg.hop_ms / 1000.0) * sr).round() as usize;
    let n = clip.samples.len();
    let min_voiced = ((cfg.min_voiced_ms / 1000.0) * sr).round() as usize;

    let mut keep = vec![true; n];
    if frame > 0 && hop > 0 && n >= frame {
        let n_windows = (n - frame) / hop + 1;
        let mut energies = Vec::with_capacity(n_windows);
        let mut max_energy = 0.0f64;
        for k in 0..n_windows {
            let e: f64 = clip.samples[k * hop..k * hop + frame]
                .iter()
                .map(|&s| (s as f64) * (s as f64))
                .sum();
            max_energy = max_energy.max(e);
            energies.push(e);
        }
        if max_energy == 0.0 {
            return Err(AudioError::AllSilent {
                retained_ms: 0.0,
                min_ms: cfg.min_voiced_ms,
            });
        }
        let threshold = 10.0 * max_energy.log10() + cfg.threshold_db;
        for (k, &e) in energies.iter().enumerate() {
            let db = if e > 0.0 { 10.0 * e.log10() } else { f64::NEG_INFINITY };
            if db < threshold {
                // the last window's decision extends over the trailing samples
                // that no full window covers
                let end = if k == n_windows - 1 { n } else { k * hop + frame };
                for keep_flag in &mut keep[k * hop..end] {
                    *keep_flag = false;
                }
            }
        }
    }

    let samples: Vec<f32> = clip
        .samples
        .iter()
        .zip(&keep)
        .filter_map(|(&s, &k)| if k { Some(s) } else { None })
        .collect();
    if samples.len() < min_voiced {
        return Err(AudioError::AllSilent {
            retained_ms: samples.len() as f64 / sr * 1000.0,
            min_ms: cfg.min_voiced_ms,
        });
    }
    Ok(AudioClip {
        samples,
        sample_rate: clip.sample_rate,
        silent_warning: clip.silent_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn constant_clip_is_unchanged() {
        let clip = AudioClip::new(vec![0.5; 16_000], 16_000);
        let out = remove_silence(&clip, &SadConfig::default()).unwrap();
        assert_eq!(out.samples, clip.samples);
    }

    #[test]
    fn all_zero_clip_is_all_silent() {
        let clip = AudioClip::new(vec![0.0; 16_000], 16_000);
        match remove_silence(&clip, &SadConfig::default()) {
            Err(AudioError::AllSilent { .. }) => {}
            other => panic!("expected AllSilent, got {other:?}"),
        }
    }

    #[test]
    fn short_loud_clip_fails_minimum_duration() {
        // 50 ms of loud audio < 100 ms minimum
        let clip = AudioClip::new(vec![0.5; 800], 16_000);
        match remove_silence(&clip, &SadConfig::default()) {
            Err(AudioError::AllSilent { .. }) => {}
            other => panic!("expected AllSilent, got {other:?}"),
        }
    }

    #[test]
    fn trims_leading_and_trailing_silence_to_within_one_hop() {
        let sr = 16_000usize;
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut samples = vec![0.0f32; sr / 2];
        samples.extend((0..sr).map(|_| rng.random_range(-0.5f32..0.5)));
        samples.extend(vec![0.0f32; sr / 2]);
        let clip = AudioClip::new(samples.clone(), sr as u32);
        let cfg = SadConfig::default();
        let out = remove_silence(&clip, &cfg).unwrap();

        // oracle: recompute per-sample keep decisions by brute force over
        // every covering window
        let frame = 400;
        let hop = 160;
        let n = samples.len();
        let n_windows = (n - frame) / hop + 1;
        let energy = |k: usize| -> f64 {
            samples[k * hop..k * hop + frame]
                .iter()
                .map(|&s| (s as f64) * (s as f64))
                .sum()
        };
        let max_e = (0..n_windows).map(energy).fold(0.0f64, f64::max);
        let thr = 10.0 * max_e.log10() - 40.0;
        let mut expected = Vec::new();
        'outer: for i in 0..n {
            for k in 0..n_windows {
                let covers = i >= k * hop && (i < k * hop + frame || k == n_windows - 1);
                if covers {
                    let e = energy(k);
                    let db = if e > 0.0 { 10.0 * e.log10() } else { f64::NEG_INFINITY };
                    if db < thr {
                        continue 'outer;
                    }
                }
            }
            expected.push(samples[i]);
        }
        assert_eq!(out.samples, expected);

        // duration within one hop of the 1-second voiced middle
        let dur = out.samples.len() as f64 / sr as f64;
        assert!((dur - 1.0).abs() <= hop as f64 / sr as f64, "duration {dur}");
    }

    #[test]
    fn output_is_a_subsequence_of_input() {
        let sr = 16_000usize;
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut samples: Vec<f32> = (0..sr).map(|_| rng.random_range(-0.8f32..0.8)).collect();
        for s in samples.iter_mut().skip(3000).take(4000) {
            *s *= 1e-4; // quiet middle region
        }
        let clip = AudioClip::new(samples.clone(), sr as u32);
        let out = remove_silence(&clip, &SadConfig::default()).unwrap();
        // subsequence check: consume input in order
        let mut it = samples.iter();
        for v in &out.samples {
            assert!(it.any(|s| s == v), "output sample not found in order");
        }
    }
}
