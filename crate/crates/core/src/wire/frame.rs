//! Length-prefixed framing: a 4-byte big-endian length followed by the payload.

use alloc::vec::Vec;

/// Largest payload a frame may declare (16 MiB).
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    TooLarge(usize),
    #[error("stream ended inside a frame ({0} bytes pending)")]
    Truncated(usize),
}

pub fn frame(payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(payload.len() + 4);
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

/// Incremental deframer for a byte stream delivered in arbitrary pieces.
#[derive(Debug, Default, Clone)]
pub struct Deframer {
    buf: Vec<u8>,
}

impl Deframer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete payload, if one is buffered. An oversized declared
    /// length is reported as soon as the prefix is readable.
    pub fn next_frame(&mut self) -> Result<Option<Vec<u8>>, FrameError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]]) as usize;
        if len > MAX_FRAME_LEN {
            return Err(FrameError::TooLarge(len));
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let payload = self.buf[4..4 + len].to_vec();
        self.buf.drain(..4 + len);
        Ok(Some(payload))
    }

    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    /// Call at end of stream: fails if a partial frame is left over.
    pub fn finish(&self) -> Result<(), FrameError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(FrameError::Truncated(self.buf.len()))
        }
    }
}

/// Splits a complete byte stream into its payloads.
pub fn deframe_all(bytes: &[u8]) -> Result<Vec<Vec<u8>>, FrameError> {
    let mut d = Deframer::new();
    d.push(bytes);
    let mut out = Vec::new();
    while let Some(p) = d.next_frame()? {
        out.push(p);
    }
    d.finish()?;
    Ok(out)
}
