//! Binary corpus container.
//!
//! Layout: the magic `ADAVSR01`, a `u32` byte length and that many bytes of
//! UTF-8 JSON header, then `count` records. A record is the frames, the
//! waveform and the log-mel as little-endian `f32`, followed by a `u32` token
//! count and the token ids as `u32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use adavsr_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{CorpusSpec, RawSample};
use crate::vocab::Vocab;

pub const MAGIC: &[u8; 8] = b"ADAVSR01";

/// Largest header accepted when reading.
const MAX_HEADER: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shapes {
    pub frames: Vec<usize>,
    pub waveform: Vec<usize>,
    pub logmel: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub spec: CorpusSpec,
    pub seed: u64,
    pub vocab: String,
    pub shapes: Shapes,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: CorpusSpec,
    pub samples: Vec<RawSample>,
}

impl Dataset {
    pub fn vocab(&self) -> Result<Vocab> {
        self.spec.vocab()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn shapes(&self) -> Result<Shapes> {
        let first = self.samples.first().ok_or_else(|| Error::input("dataset has no samples"))?;
        let shapes = Shapes {
            frames: first.frames.shape().to_vec(),
            waveform: vec![first.waveform.len()],
            logmel: first.logmel.shape().to_vec(),
        };
        for (i, s) in self.samples.iter().enumerate() {
            if s.frames.shape() != shapes.frames.as_slice()
                || s.waveform.len() != shapes.waveform[0]
                || s.logmel.shape() != shapes.logmel.as_slice()
            {
                return Err(Error::input(format!("sample {i} does not match the shapes of sample 0")));
            }
        }
        Ok(shapes)
    }

    pub fn header(&self) -> Result<Header> {
        Ok(Header {
            spec: self.spec.clone(),
            seed: self.spec.seed,
            vocab: self.spec.letters.clone(),
            shapes: self.shapes()?,
            count: self.samples.len(),
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = serde_json::to_vec(&self.header()?)?;
        let io = |e| Error::io("writing dataset", e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&len_u32(header.len())?.to_le_bytes()).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        for (i, s) in self.samples.iter().enumerate() {
            let mut buf = Vec::new();
            for values in [s.frames.data(), &s.waveform[..], s.logmel.data()] {
                for &v in values {
                    let f = v as f32;
                    if f as f64 != v && !(v.is_nan() && f.is_nan()) {
                        return Err(Error::input(format!("sample {i} holds {v}, which is not an f32 value")));
                    }
                    buf.extend_from_slice(&f.to_le_bytes());
                }
            }
            buf.extend_from_slice(&len_u32(s.transcript.len())?.to_le_bytes());
            for &id in &s.transcript {
                buf.extend_from_slice(&len_u32(id)?.to_le_bytes());
            }
            w.write_all(&buf).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::input("not an ADAVSR01 dataset (bad magic)"));
        }
        let header_len = read_u32(r)? as usize;
        if header_len > MAX_HEADER {
            return Err(Error::input(format!("dataset header of {header_len} bytes is implausibly large")));
        }
        let mut raw = vec![0u8; header_len];
        read_exact(r, &mut raw)?;
        let text = std::str::from_utf8(&raw).map_err(|_| Error::input("dataset header is not UTF-8"))?;
        let header: Header = serde_json::from_str(text)?;
        let vocab = header.spec.vocab()?;
        if header.vocab != header.spec.letters || header.seed != header.spec.seed {
            return Err(Error::input("dataset header disagrees with its corpus spec"));
        }
        let Shapes { frames, waveform, logmel } = &header.shapes;
        if frames.len() != 4 || waveform.len() != 1 || logmel.len() != 2 {
            return Err(Error::input("dataset shapes must be [T,H,W,C], [N] and [F,S]"));
        }
        let mut samples = Vec::with_capacity(header.count.min(1 << 16));
        for i in 0..header.count {
            let frames = Tensor::new(frames, read_f32s(r, frames.iter().product())?)?;
            let wave = read_f32s(r, waveform[0])?;
            let logmel = Tensor::new(logmel, read_f32s(r, logmel.iter().product())?)?;
            let n = read_u32(r)? as usize;
            let mut transcript = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let id = read_u32(r)? as usize;
                if id >= vocab.size() {
                    return Err(Error::input(format!("sample {i} has token id {id} outside the vocabulary")));
                }
                transcript.push(id);
            }
            samples.push(RawSample {
                frames,
                waveform: wave,
                logmel,
                transcript,
            });
        }
        let mut rest = [0u8; 1];
        match r.read(&mut rest) {
            Ok(0) => {}
            Ok(_) => return Err(Error::input("trailing bytes after the last dataset record")),
            Err(e) => return Err(Error::io("reading dataset", e)),
        }
        Ok(Self {
            spec: header.spec,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_to(&mut BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::input(format!("{n} does not fit in a u32 field")))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::input("dataset is truncated")
        } else {
            Error::io("reading dataset", e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 4 * n];
    read_exact(r, &mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}
