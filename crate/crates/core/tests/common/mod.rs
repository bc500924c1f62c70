#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use sumcap::clock::Clock;
use sumcap::pipeline::{Pipeline, ProviderIds, SessionConfig};
use sumcap::protocol::{kind, Frame};
use sumcap::providers::{ProviderDescriptor, ProviderKind, ProviderMode, ProviderRegistry};
use sumcap::server::{Client, Server, ServerSettings};
use sumcap::store::DataStore;

pub const WAIT: Duration = Duration::from_secs(10);

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// The fixture transcripts, in id order.
pub fn corpus() -> BTreeMap<String, String> {
    let raw = std::fs::read_to_string(fixtures_dir().join("corpus.json")).unwrap();
    serde_json::from_str(&raw).unwrap()
}

pub fn corpus_asr() -> ProviderDescriptor {
    ProviderDescriptor::new("corpus-asr", ProviderKind::Asr, ProviderMode::Mock)
        .param("fixtures", fixtures_dir().join("corpus.json").display().to_string())
}

pub fn session_config() -> SessionConfig {
    SessionConfig {
        provider_ids: ProviderIds {
            asr: "corpus-asr".into(),
            ..ProviderIds::default()
        },
        ..SessionConfig::default()
    }
}

pub fn pipeline(extra: &[ProviderDescriptor], store: Option<Arc<DataStore>>, clock: Arc<dyn Clock>) -> Arc<Pipeline> {
    let mut descs = vec![corpus_asr()];
    descs.extend_from_slice(extra);
    let registry = ProviderRegistry::build(&descs, clock.clone(), None).unwrap();
    Arc::new(Pipeline::new(Arc::new(registry), store, clock))
}

/// Settings with heartbeats slow enough not to interleave with test traffic.
pub fn quiet_settings() -> ServerSettings {
    ServerSettings {
        heartbeat_interval_ms: 60_000,
        default_session: session_config(),
        ..ServerSettings::default()
    }
}

pub async fn start(pipeline: Arc<Pipeline>, settings: ServerSettings) -> (Server, SocketAddr) {
    let server = Server::new(pipeline, settings);
    let (addr, _) = server.listen_tcp("127.0.0.1:0").await.unwrap();
    (server, addr)
}

pub async fn join(addr: SocketAddr, session: &str, client_kind: &str) -> (Client, Frame) {
    let mut c = Client::connect(addr, session).await.unwrap();
    c.send(kind::HELLO, json!({ "client_kind": client_kind }))
        .await
        .unwrap();
    let ack = c.recv_within(WAIT).await.unwrap().expect("config.ack");
    assert_eq!(ack.kind, kind::CONFIG_ACK, "{ack:?}");
    (c, ack)
}

pub async fn expect_kind(c: &mut Client, want: &str) -> Frame {
    let f = c.recv_within(WAIT).await.unwrap().expect("connection open");
    assert_eq!(f.kind, want, "unexpected frame {f:?}");
    f
}

pub fn error_code(f: &Frame) -> &str {
    assert_eq!(f.kind, kind::ERROR, "{f:?}");
    f.payload["code"].as_str().unwrap()
}

pub fn audio(fixture: &str) -> Value {
    json!({ "fixture": fixture })
}

/// Polls until `cond` holds or the wait limit passes.
pub async fn eventually(mut cond: impl FnMut() -> bool) -> bool {
    let deadline = tokio::time::Instant::now() + WAIT;
    while tokio::time::Instant::now() < deadline {
        if cond() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    cond()
}
