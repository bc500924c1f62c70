//! Stream-socket and WebSocket adapters around [`run_connection`].

use std::net::SocketAddr;
use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use serde_json::Value;
use tokio::io::AsyncWrite;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use super::connection::{run_connection, Inbound};
use super::{Outgoing, Peer, ServerState};
use crate::protocol::{kind, read_body, write_body, ErrorPayload, Frame, ReadOutcome};

const INBOUND_QUEUE: usize = 64;

trait BodySink {
    async fn send_body(&mut self, body: String) -> bool;
    async fn close(&mut self);
}

struct StreamSink<W>(W);

impl<W: AsyncWrite + Unpin> BodySink for StreamSink<W> {
    async fn send_body(&mut self, body: String) -> bool {
        write_body(&mut self.0, body.as_bytes()).await.is_ok()
    }

    async fn close(&mut self) {
        let _ = tokio::io::AsyncWriteExt::shutdown(&mut self.0).await;
    }
}

struct WsSink<S>(S);

impl<S> BodySink for WsSink<S>
where
    S: futures_util::Sink<Message> + Unpin,
{
    async fn send_body(&mut self, body: String) -> bool {
        self.0.send(Message::Text(body.into())).await.is_ok()
    }

    async fn close(&mut self) {
        let _ = self.0.send(Message::Close(None)).await;
        let _ = self.0.close().await;
    }
}

fn render(out: &Outgoing, seq: u64) -> String {
    Frame {
        kind: out.kind.to_owned(),
        session_id: out.session_id.to_string(),
        seq,
        payload: Value::clone(&out.payload),
    }
    .to_json()
}

/// Stamps per-connection sequence numbers and writes frames until the queue
/// closes or the peer is killed; a kill reason is written as a final `error`.
async fn write_loop<S: BodySink>(
    mut sink: S,
    mut rx: mpsc::Receiver<Outgoing>,
    mut kill: watch::Receiver<Option<ErrorPayload>>,
) {
    let mut seq = 0u64;
    let mut kill_open = true;
    loop {
        tokio::select! {
            biased;
            changed = kill.changed(), if kill_open => {
                if changed.is_err() {
                    kill_open = false;
                    continue;
                }
                let reason = kill.borrow_and_update().clone();
                if let Some(err) = reason {
                    seq += 1;
                    let out = Outgoing {
                        kind: kind::ERROR,
                        session_id: Arc::from(""),
                        payload: Arc::new(serde_json::to_value(err).expect("error serializes")),
                    };
                    sink.send_body(render(&out, seq)).await;
                    break;
                }
            }
            msg = rx.recv() => match msg {
                Some(out) => {
                    seq += 1;
                    if !sink.send_body(render(&out, seq)).await {
                        break;
                    }
                }
                None => break,
            },
        }
    }
    sink.close().await;
}

fn new_peer(state: &ServerState) -> (Peer, mpsc::Receiver<Outgoing>, watch::Receiver<Option<ErrorPayload>>) {
    let (tx, rx) = mpsc::channel(state.settings.viewer_buffer.max(1));
    let (kill_tx, kill_rx) = watch::channel(None);
    (
        Peer {
            id: state.next_peer_id(),
            tx,
            kill: Arc::new(kill_tx),
        },
        rx,
        kill_rx,
    )
}

async fn serve_tcp(state: Arc<ServerState>, stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let (mut rd, wr) = stream.into_split();
    let (peer, out_rx, kill_rx) = new_peer(&state);
    let (in_tx, in_rx) = mpsc::channel(INBOUND_QUEUE);
    let reader = tokio::spawn(async move {
        loop {
            let input = match read_body(&mut rd).await {
                Ok(ReadOutcome::Body(body)) => Inbound::Body(body),
                Ok(ReadOutcome::Oversized(len)) => Inbound::Oversized(len),
                Ok(ReadOutcome::Eof) | Err(_) => break,
            };
            if in_tx.send(input).await.is_err() {
                break;
            }
        }
    });
    let writer = tokio::spawn(write_loop(StreamSink(wr), out_rx, kill_rx.clone()));
    run_connection(state, in_rx, peer, kill_rx).await;
    reader.abort();
    let _ = writer.await;
}

async fn serve_ws(state: Arc<ServerState>, stream: TcpStream) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            tracing::debug!("websocket handshake failed: {e}");
            return;
        }
    };
    let (ws_tx, mut ws_rx) = ws.split();
    let (peer, out_rx, kill_rx) = new_peer(&state);
    let (in_tx, in_rx) = mpsc::channel(INBOUND_QUEUE);
    let reader = tokio::spawn(async move {
        while let Some(msg) = ws_rx.next().await {
            let input = match msg {
                Ok(Message::Text(text)) => Inbound::Body(text.as_bytes().to_vec()),
                Ok(Message::Binary(bytes)) => Inbound::Body(bytes.to_vec()),
                Ok(Message::Close(_)) | Err(_) => break,
                Ok(_) => continue,
            };
            if in_tx.send(input).await.is_err() {
                break;
            }
        }
    });
    let writer = tokio::spawn(write_loop(WsSink(ws_tx), out_rx, kill_rx.clone()));
    run_connection(state, in_rx, peer, kill_rx).await;
    reader.abort();
    let _ = writer.await;
}

async fn accept_loop<F, Fut>(listener: TcpListener, state: Arc<ServerState>, serve: F)
where
    F: Fn(Arc<ServerState>, TcpStream) -> Fut,
    Fut: std::future::Future<Output = ()> + Send + 'static,
{
    loop {
        match listener.accept().await {
            Ok((stream, remote)) => {
                tracing::debug!(%remote, "accepted");
                tokio::spawn(serve(state.clone(), stream));
            }
            Err(e) => {
                tracing::warn!("accept failed: {e}");
                tokio::time::sleep(std::time::Duration::from_millis(50)).await;
            }
        }
    }
}

pub(crate) async fn listen_tcp(state: Arc<ServerState>, addr: &str) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(accept_loop(listener, state, serve_tcp))))
}

pub(crate) async fn listen_ws(state: Arc<ServerState>, addr: &str) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(accept_loop(listener, state, serve_ws))))
}
