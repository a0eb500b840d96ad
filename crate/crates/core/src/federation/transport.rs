//! Frame carriers. [`InProcess`] hands the bytes straight back;
//! [`LoopbackTcp`] sends each frame to an echo peer over a local socket and
//! reads it back, so the same frames cross a real stream.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::thread::JoinHandle;

use super::codec::{frame_len_from_header, HEADER_LEN};
use super::FederationError;

pub trait Transport: Send {
    /// Delivers one encoded frame and returns the bytes the receiver saw.
    fn carry(&mut self, frame: &[u8]) -> Result<Vec<u8>, FederationError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct InProcess;

impl Transport for InProcess {
    fn carry(&mut self, frame: &[u8]) -> Result<Vec<u8>, FederationError> {
        Ok(frame.to_vec())
    }
}

/// Reads one complete frame from a stream. `Ok(None)` on clean EOF.
pub fn read_frame(stream: &mut impl Read) -> Result<Option<Vec<u8>>, FederationError> {
    let mut header = [0u8; HEADER_LEN];
    match stream.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let total = frame_len_from_header(&header)?;
    let mut frame = header.to_vec();
    frame.resize(total, 0);
    stream.read_exact(&mut frame[HEADER_LEN..])?;
    Ok(Some(frame))
}

fn echo(mut stream: TcpStream) -> Result<(), FederationError> {
    while let Some(frame) = read_frame(&mut stream)? {
        stream.write_all(&frame)?;
    }
    Ok(())
}

pub struct LoopbackTcp {
    stream: TcpStream,
    peer: Option<JoinHandle<Result<(), FederationError>>>,
}

impl LoopbackTcp {
    pub fn connect() -> Result<Self, FederationError> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let peer = std::thread::spawn(move || {
            let (s, _) = listener.accept()?;
            echo(s)
        });
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            peer: Some(peer),
        })
    }
}

impl Transport for LoopbackTcp {
    fn carry(&mut self, frame: &[u8]) -> Result<Vec<u8>, FederationError> {
        self.stream.write_all(frame)?;
        read_frame(&mut self.stream)?
            .ok_or_else(|| FederationError::Transport("peer closed the connection".to_string()))
    }
}

impl Drop for LoopbackTcp {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(h) = self.peer.take() {
            let _ = h.join();
        }
    }
}
