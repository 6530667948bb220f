//! 16-bit PCM mono RIFF/WAVE reading and writing.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::Waveform;
use crate::error::{Error, Result};

const PCM: u16 = 1;

pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn save_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(wave)).map_err(|e| Error::io(path, e))
}

fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub(crate) fn encode(wave: &Waveform) -> Vec<u8> {
    let data_len = (wave.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.write_u32::<LittleEndian>(36 + data_len).unwrap();
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.write_u32::<LittleEndian>(16).unwrap();
    out.write_u16::<LittleEndian>(PCM).unwrap();
    out.write_u16::<LittleEndian>(1).unwrap();
    out.write_u32::<LittleEndian>(wave.sample_rate()).unwrap();
    out.write_u32::<LittleEndian>(wave.sample_rate() * 2).unwrap();
    out.write_u16::<LittleEndian>(2).unwrap();
    out.write_u16::<LittleEndian>(16).unwrap();
    out.extend_from_slice(b"data");
    out.write_u32::<LittleEndian>(data_len).unwrap();
    for &x in wave.samples() {
        out.write_i16::<LittleEndian>(quantize(x)).unwrap();
    }
    out
}

struct Format {
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Waveform> {
    if bytes.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let mut cur = Cursor::new(bytes);
    let mut tag = [0u8; 4];
    let malformed = |what: &str| Error::MalformedWav(what.to_string());
    cur.read_exact(&mut tag).map_err(|_| malformed("truncated header"))?;
    if &tag != b"RIFF" {
        return Err(malformed("missing RIFF tag"));
    }
    cur.read_u32::<LittleEndian>().map_err(|_| malformed("truncated header"))?;
    cur.read_exact(&mut tag).map_err(|_| malformed("truncated header"))?;
    if &tag != b"WAVE" {
        return Err(malformed("missing WAVE tag"));
    }

    let mut format: Option<Format> = None;
    loop {
        if cur.read_exact(&mut tag).is_err() {
            return Err(malformed("no data chunk"));
        }
        let len = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| malformed("truncated chunk header"))? as usize;
        let start = cur.position() as usize;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| malformed("chunk extends past end of file"))?;
        match &tag {
            b"fmt " => {
                if len < 16 {
                    return Err(malformed("fmt chunk too short"));
                }
                let tag = cur.read_u16::<LittleEndian>().unwrap();
                let channels = cur.read_u16::<LittleEndian>().unwrap();
                let sample_rate = cur.read_u32::<LittleEndian>().unwrap();
                let _byte_rate = cur.read_u32::<LittleEndian>().unwrap();
                let _align = cur.read_u16::<LittleEndian>().unwrap();
                let bits = cur.read_u16::<LittleEndian>().unwrap();
                if tag != PCM {
                    return Err(Error::UnsupportedFormat(format!(
                        "format tag {tag}, only PCM (1) is supported"
                    )));
                }
                format = Some(Format {
                    channels,
                    sample_rate,
                    bits,
                });
            }
            b"data" => {
                let fmt = format.ok_or_else(|| malformed("data chunk before fmt chunk"))?;
                if fmt.channels != 1 {
                    return Err(Error::MonoRequired(fmt.channels));
                }
                if fmt.bits != 16 {
                    return Err(Error::UnsupportedFormat(format!(
                        "{}-bit samples, only 16-bit is supported",
                        fmt.bits
                    )));
                }
                if len < 2 {
                    return Err(Error::EmptyAudio);
                }
                let samples = bytes[start..start + len / 2 * 2]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Waveform::new(samples, fmt.sample_rate);
            }
            _ => {}
        }
        // chunks are word aligned
        cur.set_position((end + (len & 1)) as u64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64) -> Waveform {
        let n = (secs * 24_000.0) as usize;
        let samples = (0..n)
            .map(|i| 0.8 * (2.0 * std::f64::consts::PI * freq * i as f64 / 24_000.0).sin())
            .collect();
        Waveform::new(samples, 24_000).unwrap()
    }

    #[test]
    fn round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = sine(440.0, 1.0);
        save_wav(&path, &w).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 24_000);
        assert_eq!(back.len(), w.len());
        let max = w
            .samples()
            .iter()
            .zip(back.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max <= 2f64.powi(-15), "{max}");
    }

    #[test]
    fn full_scale_is_clamped() {
        let w = Waveform::new(vec![1.0, -1.0, 0.0], 24_000).unwrap();
        let back = decode(&encode(&w)).unwrap();
        assert_eq!(back.samples(), &[32767.0 / 32768.0, -1.0, 0.0]);
    }

    #[test]
    fn zero_length_file_is_empty_audio() {
        assert!(matches!(decode(&[]), Err(Error::EmptyAudio)));
        let w = Waveform::new(vec![0.0], 24_000).unwrap();
        let mut bytes = encode(&w);
        // strip the single sample and patch the data length
        bytes.truncate(44);
        bytes[40..44].copy_from_slice(&0u32.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "empty audio");
    }

    #[test]
    fn stereo_is_rejected() {
        let w = Waveform::new(vec![0.0; 4], 24_000).unwrap();
        let mut bytes = encode(&w);
        bytes[22..24].copy_from_slice(&2u16.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, Error::MonoRequired(2)));
        assert!(err.to_string().contains("mono required"));
    }

    #[test]
    fn bad_bit_depth_and_garbage_headers() {
        let w = Waveform::new(vec![0.0; 4], 24_000).unwrap();
        let mut bytes = encode(&w);
        bytes[34..36].copy_from_slice(&24u16.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode(b"RIFX0000WAVE"), Err(Error::MalformedWav(_))));
        assert!(matches!(decode(b"RIFF"), Err(Error::MalformedWav(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let w = Waveform::new(vec![0.25, -0.5], 24_000).unwrap();
        let bytes = encode(&w);
        let mut with_list = bytes[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]); // odd length + pad byte
        with_list.extend_from_slice(&bytes[36..]);
        assert_eq!(decode(&with_list).unwrap().samples(), &[0.25, -0.5]);
    }
}
