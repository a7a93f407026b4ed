//! Binary token-sequence files.
//!
//! All integers are little-endian `u32`, all tensors row-major little-endian `f32`:
//!
//! ```text
//! magic "SHRPSEQ\0" | version | N_v | N_t | d | frames | tokens_per_frame
//! | has_truth | boundary_count | needle_count
//! | boundaries (frame indices) | needles (visual indices)
//! | visual N_v×d | text N_t×d
//! ```

use std::fs;
use std::path::Path;

use sharp_core::segmask::SegmentPartition;
use sharp_core::videogen::SyntheticVideo;
use sharp_core::{Matrix, TokenSequence};

use crate::error::{Result, SharpError};

pub const SEQ_MAGIC: &[u8; 8] = b"SHRPSEQ\0";
pub const SEQ_VERSION: u32 = 1;

/// A sequence plus whatever ground truth travelled with it.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFile {
    pub sequence: TokenSequence,
    /// Scene-boundary frame indices, when known.
    pub truth: Option<Vec<usize>>,
    pub needles: Vec<usize>,
}

impl SequenceFile {
    pub fn from_video(video: &SyntheticVideo) -> Self {
        Self {
            sequence: video.sequence.clone(),
            truth: Some(video.truth.boundaries().to_vec()),
            needles: video.needles.clone(),
        }
    }

    pub fn truth_partition(&self) -> Option<SegmentPartition> {
        let b = self.truth.clone()?;
        SegmentPartition::from_boundaries(b, self.sequence.frames(), self.sequence.tokens_per_frame()).ok()
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> std::result::Result<(), String> {
    let v = u32::try_from(v).map_err(|_| format!("value {v} does not fit in u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(file: &SequenceFile) -> std::result::Result<Vec<u8>, String> {
    let seq = &file.sequence;
    let mut out = Vec::with_capacity(64 + 4 * seq.len() * seq.dim());
    out.extend_from_slice(SEQ_MAGIC);
    out.extend_from_slice(&SEQ_VERSION.to_le_bytes());
    let truth = file.truth.as_deref().unwrap_or(&[]);
    for v in [
        seq.visual_len(),
        seq.text_len(),
        seq.dim(),
        seq.frames(),
        seq.tokens_per_frame(),
        usize::from(file.truth.is_some()),
        truth.len(),
        file.needles.len(),
    ] {
        put_u32(&mut out, v)?;
    }
    for &v in truth.iter().chain(&file.needles) {
        put_u32(&mut out, v)?;
    }
    for m in [seq.visual(), seq.text()] {
        for x in m.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format!("truncated: needed {n} bytes at offset {}, file has {}", self.at, self.bytes.len())
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> std::result::Result<Matrix, String> {
        let n = rows.checked_mul(cols).ok_or("tensor size overflows")?;
        let raw = self.take(n.checked_mul(4).ok_or("tensor size overflows")?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<SequenceFile, String> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != SEQ_MAGIC {
        return Err("not a sequence file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != SEQ_VERSION as usize {
        return Err(format!("unsupported version {version} (expected {SEQ_VERSION})"));
    }
    let mut hdr = [0usize; 8];
    for h in hdr.iter_mut() {
        *h = r.u32()?;
    }
    let [n_v, n_t, d, frames, p, has_truth, n_b, n_n] = hdr;
    if frames.checked_mul(p) != Some(n_v) {
        return Err(format!("N_v = {n_v} is not frames × tokens_per_frame = {frames} × {p}"));
    }
    if has_truth > 1 || (has_truth == 0 && n_b > 0) {
        return Err("inconsistent ground-truth header".into());
    }
    let boundaries = (0..n_b).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
    let needles = (0..n_n).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(&bad) = needles.iter().find(|&&i| i >= n_v) {
        return Err(format!("needle index {bad} outside the {n_v} visual tokens"));
    }
    let visual = r.matrix(n_v, d)?;
    let text = r.matrix(n_t, d)?;
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    let sequence = TokenSequence::new(visual, text, frames, p).map_err(|e| e.to_string())?;
    if has_truth == 1 {
        SegmentPartition::from_boundaries(boundaries.clone(), frames, p).map_err(|e| e.to_string())?;
    }
    Ok(SequenceFile {
        sequence,
        truth: (has_truth == 1).then_some(boundaries),
        needles,
    })
}

pub fn write(path: &Path, file: &SequenceFile) -> Result<()> {
    let bytes = encode(file).map_err(|m| SharpError::format(path, m))?;
    fs::write(path, bytes).map_err(|e| SharpError::io(path, e))
}

pub fn read(path: &Path) -> Result<SequenceFile> {
    let bytes = fs::read(path).map_err(|e| SharpError::io(path, e))?;
    decode(&bytes).map_err(|m| SharpError::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sharp_core::videogen::{generate, NeedleSpec, SyntheticSpec};
    use sharp_core::ModelConfig;

    fn sample() -> SequenceFile {
        let mut spec = SyntheticSpec::uniform(2, 2, 3, 0.1, 2, 5);
        spec.needles.push(NeedleSpec { frame: 3, slot: 1, seed: 2 });
        SequenceFile::from_video(&generate(&spec, &ModelConfig::default()).unwrap())
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let bytes = encode(&f).unwrap();
        assert_eq!(&bytes[..8], SEQ_MAGIC);
        assert_eq!(bytes.len(), 8 + 4 * 9 + 4 * 2 + 4 * (12 + 2) * 64);
        assert_eq!(decode(&bytes).unwrap(), f);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&sample()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).unwrap_err().contains("truncated"));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).unwrap_err().contains("trailing"));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode(&magic).is_err());
        let mut version = bytes;
        version[8] = 9;
        assert!(decode(&version).unwrap_err().contains("version"));
    }

    #[test]
    fn without_truth() {
        let mut f = sample();
        f.truth = None;
        f.needles.clear();
        let back = decode(&encode(&f).unwrap()).unwrap();
        assert_eq!(back.truth, None);
        assert_eq!(back.truth_partition(), None);
    }
}
