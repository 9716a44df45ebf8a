//! 16-bit PCM mono WAV at 16 kHz.

use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use super::{AudioBuffer, DspError, SAMPLE_RATE};

fn spec() -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

fn to_i16(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

pub fn write_wav_to<W: Write + Seek>(audio: &AudioBuffer, w: W) -> Result<(), DspError> {
    let mut writer = hound::WavWriter::new(w, spec())?;
    {
        let mut i16w = writer.get_i16_writer(audio.samples.len() as u32);
        for &x in &audio.samples {
            i16w.write_sample(to_i16(x));
        }
        i16w.flush()?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn wav_bytes(audio: &AudioBuffer) -> Vec<u8> {
    let mut cur = Cursor::new(Vec::new());
    write_wav_to(audio, &mut cur).expect("in-memory WAV write");
    cur.into_inner()
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<(), DspError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path).map_err(hound::Error::IoError)?);
    write_wav_to(audio, file)
}

pub fn read_wav_from<R: Read>(r: R) -> Result<AudioBuffer, DspError> {
    let reader = hound::WavReader::new(r)?;
    let s = reader.spec();
    if s.channels != 1 || s.sample_rate != SAMPLE_RATE || s.bits_per_sample != 16 || s.sample_format != hound::SampleFormat::Int {
        return Err(DspError::WavFormat(format!(
            "{} ch, {} Hz, {}-bit {:?} (need mono 16 kHz 16-bit PCM)",
            s.channels, s.sample_rate, s.bits_per_sample, s.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|r| r.map(|v| f64::from(v) / 32767.0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AudioBuffer::new(samples))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, DspError> {
    let file = std::io::BufReader::new(std::fs::File::open(path).map_err(hound::Error::IoError)?);
    read_wav_from(file)
}
