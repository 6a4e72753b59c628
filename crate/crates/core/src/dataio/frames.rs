//! Raw frame dump: `FRMS`, u16 height, u16 width, u32 frame count, then each
//! frame as little-endian f32 luminance, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::optflow::FrameGray;

const MAGIC: &[u8; 4] = b"FRMS";

pub fn write_frames(mut w: impl Write, frames: &[FrameGray]) -> std::io::Result<()> {
    let (h, wd) = frames
        .first()
        .map(|f| (f.height(), f.width()))
        .unwrap_or((0, 0));
    w.write_all(MAGIC)?;
    w.write_all(&(h as u16).to_le_bytes())?;
    w.write_all(&(wd as u16).to_le_bytes())?;
    w.write_all(&(frames.len() as u32).to_le_bytes())?;
    for f in frames {
        for v in f.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_frames(mut r: impl Read) -> Result<Vec<FrameGray>> {
    let err = |reason: &str| Error::Load {
        what: "frame dump".into(),
        reason: reason.into(),
    };
    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .map_err(|_| err("truncated header"))?;
    if &header[..4] != MAGIC {
        return Err(err("bad magic"));
    }
    let h = u16::from_le_bytes([header[4], header[5]]) as usize;
    let w = u16::from_le_bytes([header[6], header[7]]) as usize;
    let count = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut buf = vec![0u8; 4 * h * w];
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| err(&format!("truncated at frame {i} of {count}")))?;
        let vals = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        frames.push(FrameGray::new(h, w, vals)?);
    }
    Ok(frames)
}

pub fn write_frames_file(path: &Path, frames: &[FrameGray]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_frames(&mut w, frames).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_frames_file(path: &Path) -> Result<Vec<FrameGray>> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_frames(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let frames: Vec<FrameGray> = (0..3)
            .map(|k| FrameGray::new(16, 18, vec![k as f32 * 0.25; 288]).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_frames(&mut buf, &frames).unwrap();
        assert_eq!(&buf[..4], b"FRMS");
        assert_eq!(buf.len(), 12 + 3 * 288 * 4);
        assert_eq!(read_frames(&buf[..]).unwrap(), frames);
        assert!(read_frames(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_frames(&bad[..]).is_err());
    }
}
