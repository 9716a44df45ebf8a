use super::mel::{mel_center_frequencies, MelSpectrogram};
use super::DspError;

/// Sample Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, DspError> {
    if a.len() != b.len() {
        return Err(DspError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(DspError::Empty);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(DspError::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Energy-weighted mean of the Mel band centers, in Hz.
pub fn spectral_centroid(s: &MelSpectrogram) -> f64 {
    let centers = mel_center_frequencies();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, &f) in centers.iter().enumerate() {
        let e: f64 = s.values.row(k).iter().sum();
        num += f * e;
        den += e;
    }
    num / den
}

/// `20 log10` of the mean linear magnitude over all cells.
pub fn mean_energy(s: &MelSpectrogram) -> f64 {
    let v = s.values.as_slice();
    20.0 * (v.iter().sum::<f64>() / v.len() as f64).log10()
}
