use std::time::Duration;

use serde::Serialize;
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

use crate::protocol::{kind, read_body, write_body, Frame, ProtocolError, ReadOutcome};

/// Minimal stream-socket client for the relay protocol. Numbers outgoing
/// frames itself.
pub struct Client {
    reader: OwnedReadHalf,
    writer: OwnedWriteHalf,
    session_id: String,
    seq: u64,
}

impl Client {
    pub async fn connect(addr: impl tokio::net::ToSocketAddrs, session_id: impl Into<String>) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (reader, writer) = stream.into_split();
        Ok(Self {
            reader,
            writer,
            session_id: session_id.into(),
            seq: 0,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    /// Sends a frame with the next sequence number; returns that number.
    pub async fn send(&mut self, kind: &str, payload: impl Serialize) -> Result<u64, ProtocolError> {
        self.seq += 1;
        let frame = Frame::new(kind, self.session_id.clone(), self.seq, payload);
        self.send_frame(&frame).await?;
        Ok(self.seq)
    }

    /// Sends `frame` as is, without touching its sequence number.
    pub async fn send_frame(&mut self, frame: &Frame) -> Result<(), ProtocolError> {
        self.send_raw(frame.to_json().as_bytes()).await
    }

    pub async fn send_raw(&mut self, body: &[u8]) -> Result<(), ProtocolError> {
        write_body(&mut self.writer, body).await
    }

    /// Next frame, or `None` once the server closes the connection.
    pub async fn recv(&mut self) -> Result<Option<Frame>, ProtocolError> {
        self.recv_body().await?.map(|b| Frame::parse(&b)).transpose()
    }

    /// Next raw frame body, exactly as the server wrote it.
    pub async fn recv_body(&mut self) -> Result<Option<Vec<u8>>, ProtocolError> {
        match read_body(&mut self.reader).await? {
            ReadOutcome::Body(b) => Ok(Some(b)),
            ReadOutcome::Oversized(n) => Err(ProtocolError::TooLarge(n)),
            ReadOutcome::Eof => Ok(None),
        }
    }

    /// Next frame other than `heartbeat` or `metrics`, waiting at most `limit`.
    pub async fn recv_within(&mut self, limit: Duration) -> Result<Option<Frame>, ProtocolError> {
        let deadline = tokio::time::Instant::now() + limit;
        loop {
            let frame = tokio::time::timeout_at(deadline, self.recv()).await.map_err(|_| {
                ProtocolError::Io(std::io::Error::new(std::io::ErrorKind::TimedOut, "no frame in time"))
            })??;
            match frame {
                Some(f) if f.kind == kind::HEARTBEAT || f.kind == kind::METRICS => continue,
                other => return Ok(other),
            }
        }
    }
}
