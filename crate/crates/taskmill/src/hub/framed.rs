//! Blocking framed-message I/O over byte streams.
//!
//! [`crate::wire`] stays pure; this is the one place frames meet sockets.

use std::io::{self, Read, Write};

use crate::wire::{self, DecodeError, Message};

/// Reading a frame failed.
#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error("frame I/O: {0}")]
    Io(#[from] io::Error),
    /// The peer sent something that is not a well-formed message (bad
    /// JSON, unknown kind, oversized declared length). The stream cannot
    /// be resynchronized after this.
    #[error("{0}")]
    Malformed(String),
}

/// Read one framed message. `Ok(None)` is a clean end-of-stream at a frame
/// boundary; EOF mid-frame is an I/O error.
pub fn read_message(
    r: &mut impl Read,
    cap: u32,
) -> Result<Option<(Option<u32>, Message)>, ReadError> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut prefix[got..]) {
            Ok(0) => {
                return if got == 0 {
                    Ok(None)
                } else {
                    Err(io::Error::new(
                        io::ErrorKind::UnexpectedEof,
                        "stream closed mid-prefix",
                    )
                    .into())
                }
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let declared = u32::from_le_bytes(prefix);
    if declared > cap {
        return Err(ReadError::Malformed(format!(
            "declared frame length {declared} exceeds the {cap} cap"
        )));
    }
    let mut body = vec![0u8; declared as usize];
    r.read_exact(&mut body)?;
    match wire::decode_body(&body) {
        Ok((tag, msg)) => Ok(Some((tag, msg))),
        Err(DecodeError::Malformed(m)) => Err(ReadError::Malformed(m)),
        Err(other) => Err(ReadError::Malformed(other.to_string())),
    }
}

/// Encode and write one message, flushing so it goes on the wire now.
pub fn write_message(
    w: &mut impl Write,
    tag: Option<u32>,
    msg: &Message,
    cap: u32,
) -> io::Result<()> {
    let frame = wire::encode_tagged(tag, msg, cap)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    w.write_all(&frame)?;
    w.flush()
}
