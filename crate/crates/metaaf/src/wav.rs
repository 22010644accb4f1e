//! 16 kHz mono PCM16 WAV files.

use std::path::Path;

use metaaf_core::scene::SAMPLE_RATE;

use crate::error::{Error, Result};

pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_rate as usize != SAMPLE_RATE {
        return Err(Error::format(path, format!("sample rate {} Hz, expected {SAMPLE_RATE}", spec.sample_rate)));
    }
    if spec.channels != 1 {
        return Err(Error::format(path, format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(
            path,
            format!("{:?} {}-bit samples, expected 16-bit PCM", spec.sample_format, spec.bits_per_sample),
        ));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// Writes samples clipped to `[-1, 1)`.
pub fn write_wav(path: &Path, x: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &v in x {
        w.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin() * 0.9).collect();
        write_wav(&p, &x).unwrap();
        let y = read_wav(&p).unwrap();
        assert_eq!(y.len(), 100);
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 1.0 / 32768.0));
    }

    #[test]
    fn other_rates_and_layouts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for (rate, ch, bits) in [(8000, 1, 16), (16000, 2, 16), (16000, 1, 24)] {
            let p = dir.path().join(format!("{rate}-{ch}-{bits}.wav"));
            let spec = hound::WavSpec { channels: ch, sample_rate: rate, bits_per_sample: bits, sample_format: hound::SampleFormat::Int };
            let mut w = hound::WavWriter::create(&p, spec).unwrap();
            for _ in 0..ch {
                w.write_sample(0i32).unwrap();
            }
            w.finalize().unwrap();
            assert!(matches!(read_wav(&p), Err(Error::Format { .. })), "{rate} {ch} {bits}");
        }
        assert!(matches!(read_wav(&dir.path().join("none.wav")), Err(Error::Missing { .. })));
    }
}
