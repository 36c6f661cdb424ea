use std::io::{Read, Write};
use std::path::Path;

use crate::io::{read_array, read_f64, read_u32, read_u64, write_csv_rows};
use crate::{pam4, Error, Result};

const MAGIC: &[u8; 8] = b"KQFRAME\0";
const VERSION: u32 = 1;

/// A synchronized received sequence with its ground truth.
///
/// `samples` holds `sps` standardized samples per symbol; `samples[sps * i]`
/// is the center of symbol `i`. `mean` and `std` are the statistics the raw
/// photocurrent was standardized with.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformFrame {
    pub samples: Vec<f32>,
    pub symbols: Vec<u8>,
    pub bits: Vec<u8>,
    pub sps: usize,
    pub rop: f64,
    pub seed: u64,
    pub mean: f64,
    pub std: f64,
    /// ps/nm
    pub accumulated_dispersion: f64,
    pub config_hash: [u8; 32],
}

impl WaveformFrame {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn samples_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&x| x as f64).collect()
    }

    /// Bit errors of a bare 4-level slicer on the symbol-center samples.
    pub fn slicer_bit_errors(&self) -> u64 {
        self.symbols
            .iter()
            .enumerate()
            .map(|(i, &s)| pam4::bit_errors(pam4::slice(self.samples[self.sps * i] as f64), s) as u64)
            .sum()
    }

    pub fn slicer_ber(&self) -> f64 {
        self.slicer_bit_errors() as f64 / (2 * self.len()) as f64
    }

    /// Data-aided SNR at the symbol centers: variance of the per-level means
    /// over the mean within-level variance.
    pub fn estimate_snr_db(&self) -> f64 {
        let mut sum = [0f64; 4];
        let mut sum_sq = [0f64; 4];
        let mut count = [0usize; 4];
        for (i, &s) in self.symbols.iter().enumerate() {
            let x = self.samples[self.sps * i] as f64;
            sum[s as usize] += x;
            sum_sq[s as usize] += x * x;
            count[s as usize] += 1;
        }
        let mut means = Vec::new();
        let mut noise = 0.0;
        let mut used = 0;
        for k in 0..4 {
            if count[k] > 0 {
                let m = sum[k] / count[k] as f64;
                noise += sum_sq[k] / count[k] as f64 - m * m;
                means.push(m);
                used += 1;
            }
        }
        if used == 0 {
            return f64::NAN;
        }
        let noise = noise / used as f64;
        let mu = means.iter().sum::<f64>() / used as f64;
        let signal = means.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / used as f64;
        10.0 * (signal / noise).log10()
    }

    pub fn config_hash_hex(&self) -> String {
        crate::io::hex(&self.config_hash)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.sps as u32).to_le_bytes())?;
        w.write_all(&(self.symbols.len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in [self.rop, self.mean, self.std, self.accumulated_dispersion] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.config_hash)?;
        let mut buf = Vec::with_capacity(self.samples.len() * 4 + self.symbols.len());
        for s in &self.samples {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        buf.extend_from_slice(&self.symbols);
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let magic: [u8; 8] = read_array(&mut r)?;
        if &magic != MAGIC {
            return Err(Error::format("not a frame container"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported frame version {version}")));
        }
        let sps = read_u32(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let rop = read_f64(&mut r)?;
        let mean = read_f64(&mut r)?;
        let std = read_f64(&mut r)?;
        let accumulated_dispersion = read_f64(&mut r)?;
        let config_hash: [u8; 32] = read_array(&mut r)?;
        if sps == 0 {
            return Err(Error::format("frame with zero samples per symbol"));
        }
        let mut raw = vec![0u8; n * sps * 4];
        r.read_exact(&mut raw)?;
        let samples = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut symbols = vec![0u8; n];
        r.read_exact(&mut symbols)?;
        if symbols.iter().any(|&s| s > 3) {
            return Err(Error::format("symbol index out of range"));
        }
        Ok(Self {
            samples,
            bits: pam4::gray_bits(&symbols),
            symbols,
            sps,
            rop,
            seed,
            mean,
            std,
            accumulated_dispersion,
            config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// One row per symbol: index, symbol, Gray bits, then its `sps` samples.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header = vec!["symbol_index".to_string(), "symbol".into(), "bit0".into(), "bit1".into()];
        header.extend((0..self.sps).map(|k| format!("sample{k}")));
        let rows = self.symbols.iter().enumerate().map(|(i, &s)| {
            let mut row = vec![
                i.to_string(),
                s.to_string(),
                self.bits[2 * i].to_string(),
                self.bits[2 * i + 1].to_string(),
            ];
            row.extend((0..self.sps).map(|k| self.samples[self.sps * i + k].to_string()));
            row
        });
        write_csv_rows(path, &header, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_frame, LinkConfig};

    #[test]
    fn container_round_trip() {
        let frame = build_frame(&LinkConfig::default(), 300, 2).unwrap();
        let mut buf = Vec::new();
        frame.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 4 + 8 + 8 + 32 + 32 + 300 * 2 * 4 + 300);
        let back = WaveformFrame::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, frame);
    }

    #[test]
    fn rejects_foreign_bytes() {
        assert!(matches!(
            WaveformFrame::read_from(&b"NOTAFRAMEATALL-------------"[..]),
            Err(Error::Format(_))
        ));
    }
}
