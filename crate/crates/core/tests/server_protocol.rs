mod common;

use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::json;
use sumcap::clock::{MonotonicClock, VirtualClock};
use sumcap::protocol::{code, encode_body, kind, read_body, Frame, ReadOutcome};
use sumcap::providers::{ProviderDescriptor, ProviderKind, ProviderMode};
use sumcap::server::{Client, ServerSettings};
use sumcap::store::DataStore;
use tokio::io::AsyncWriteExt;
use tokio_tungstenite::tungstenite::Message;

use common::*;

fn mono() -> Arc<MonotonicClock> {
    Arc::new(MonotonicClock::new())
}

#[tokio::test]
async fn handshake_acknowledges_with_session_config() {
    let (_server, addr) = start(pipeline(&[], None, mono()), quiet_settings()).await;
    let (_c, ack) = join(addr, "room", "speaker").await;
    assert_eq!(ack.session_id, "room");
    assert_eq!(ack.seq, 1);
    assert_eq!(ack.payload["client_kind"], "speaker");
    assert_eq!(ack.payload["config"]["target_lang"], "ja");
    assert_eq!(ack.payload["config"]["target_sigma"], json!(2.0 / 3.0));
}

#[tokio::test]
async fn hello_config_seeds_a_new_session() {
    let (server, addr) = start(pipeline(&[], None, mono()), quiet_settings()).await;
    let mut c = Client::connect(addr, "").await.unwrap();
    c.send(
        kind::HELLO,
        json!({"client_kind": "speaker", "config": {"target_lang": "de"}}),
    )
    .await
    .unwrap();
    let ack = expect_kind(&mut c, kind::CONFIG_ACK).await;
    assert!(ack.session_id.starts_with("session-"), "{}", ack.session_id);
    assert_eq!(ack.payload["config"]["target_lang"], "de");
    assert_eq!(server.state().session_ids(), vec![ack.session_id.clone()]);
}

#[tokio::test]
async fn frames_before_hello_are_rejected_without_disconnect() {
    let (_server, addr) = start(pipeline(&[], None, mono()), quiet_settings()).await;
    let mut c = Client::connect(addr, "room").await.unwrap();
    c.send(kind::AUDIO, audio("f01")).await.unwrap();
    assert_eq!(error_code(&expect_kind(&mut c, kind::ERROR).await), code::HANDSHAKE);
    c.send(kind::HELLO, json!({"client_kind": "viewer"})).await.unwrap();
    expect_kind(&mut c, kind::CONFIG_ACK).await;
}

#[tokio::test]
async fn malformed_frame_yields_error_and_connection_survives() {
    let (_server, addr) = start(pipeline(&[], None, mono()), quiet_settings()).await;
    let (mut c, _) = join(addr, "room", "speaker").await;
    for body in [
        &b"{not json"[..],
        br#"{"type":"audio","session_id":"room","seq":9}"#,
        b"[]",
    ] {
        c.send_raw(body).await.unwrap();
        let err = expect_kind(&mut c, kind::ERROR).await;
        assert_eq!(error_code(&err), code::BAD_FRAME);
    }
    c.send(kind::AUDIO, json!({"fixture": 5})).await.unwrap();
    assert_eq!(error_code(&expect_kind(&mut c, kind::ERROR).await), code::BAD_PAYLOAD);
    c.send(kind::SET_DISPLAY_MODE, json!({"mode": "dual"})).await.unwrap();
    expect_kind(&mut c, kind::CONFIG_ACK).await;
}

#[tokio::test]
async fn sequence_numbers_must_increase() {
    let (_server, addr) = start(pipeline(&[], None, mono()), quiet_settings()).await;
    let (mut c, _) = join(addr, "room", "viewer").await;
    let stale = Frame::new(kind::SET_SIGMA, "room", 1, json!({"target_sigma": 0.5}));
    c.send_frame(&stale).await.unwrap();
    let err = expect_kind(&mut c, kind::ERROR).await;
    assert_eq!(error_code(&err), code::SEQ);
    assert_eq!(err.payload["ref_seq"], 1);
    let jump = Frame::new(kind::SET_SIGMA, "room", 10, json!({"target_sigma": 0.5}));
    c.send_frame(&jump).await.unwrap();
    expect_kind(&mut c, kind::CONFIG_ACK).await;
}

#[tokio::test]
async fn unknown_type_and_wrong_session_are_errors() {
    let (_server, addr) = start(pipeline(&[], None, mono()), quiet_settings()).await;
    let (mut c, _) = join(addr, "room", "viewer").await;
    c.send("bogus", json!({})).await.unwrap();
    assert_eq!(error_code(&expect_kind(&mut c, kind::ERROR).await), code::UNKNOWN_TYPE);
    c.send_frame(&Frame::new(kind::SET_SIGMA, "other", 50, json!({"target_sigma": 0.5})))
        .await
        .unwrap();
    assert_eq!(error_code(&expect_kind(&mut c, kind::ERROR).await), code::SESSION);
    c.send_frame(&Frame::new(kind::HELLO, "room", 51, json!({"client_kind": "viewer"})))
        .await
        .unwrap();
    assert_eq!(error_code(&expect_kind(&mut c, kind::ERROR).await), code::HANDSHAKE);
}

#[tokio::test]
async fn viewers_may_not_send_audio_and_bad_sigma_is_refused() {
    let (_server, addr) = start(pipeline(&[], None, mono()), quiet_settings()).await;
    let (mut v, _) = join(addr, "room", "viewer").await;
    v.send(kind::AUDIO, audio("f01")).await.unwrap();
    assert_eq!(error_code(&expect_kind(&mut v, kind::ERROR).await), code::FORBIDDEN);
    v.send(kind::SET_SIGMA, json!({"target_sigma": 1.5})).await.unwrap();
    assert_eq!(error_code(&expect_kind(&mut v, kind::ERROR).await), code::CONFIG);
}

#[tokio::test]
async fn set_sigma_applies_to_the_next_utterance_only() {
    let slow =
        ProviderDescriptor::new("slow-truncate", ProviderKind::Summarize, ProviderMode::Mock).param("fixed_delay", 0.3);
    let mut settings = quiet_settings();
    settings.default_session.provider_ids.summarize = "slow-truncate".into();
    let (_server, addr) = start(pipeline(&[slow], None, mono()), settings).await;
    let (mut viewer, _) = join(addr, "room", "viewer").await;
    let (mut speaker, _) = join(addr, "room", "speaker").await;

    speaker.send(kind::AUDIO, audio("f01")).await.unwrap();
    // Frames on one connection are handled in order, so this ack proves f01 was ingested.
    speaker
        .send(kind::SET_DISPLAY_MODE, json!({"mode": "summary"}))
        .await
        .unwrap();
    expect_kind(&mut speaker, kind::CONFIG_ACK).await;

    viewer
        .send(kind::SET_SIGMA, json!({"target_sigma": 0.5}))
        .await
        .unwrap();
    let ack = expect_kind(&mut viewer, kind::CONFIG_ACK).await;
    assert_eq!(ack.payload["config"]["target_sigma"], 0.5);
    speaker.send(kind::AUDIO, audio("f02")).await.unwrap();

    let first = expect_kind(&mut viewer, kind::CAPTION_FINAL).await;
    let second = expect_kind(&mut viewer, kind::CAPTION_FINAL).await;
    let c1 = &first.payload["caption"];
    let c2 = &second.payload["caption"];
    assert_eq!(c1["utterance_id"], 1);
    assert_eq!(c1["target_sigma"], json!(2.0 / 3.0));
    assert_eq!(c2["utterance_id"], 2);
    assert_eq!(c2["target_sigma"], 0.5);
    let sigma2 = c2["sigma_measured"].as_f64().unwrap();
    assert!(sigma2 <= 0.5 + 1.0 / 21.0, "{sigma2}");
}

#[tokio::test]
async fn toggle_without_value_flips_summarization() {
    let (_server, addr) = start(pipeline(&[], None, mono()), quiet_settings()).await;
    let (mut viewer, _) = join(addr, "room", "viewer").await;
    let (mut speaker, _) = join(addr, "room", "speaker").await;
    viewer.send(kind::TOGGLE_SUMMARIZATION, json!({})).await.unwrap();
    let ack = expect_kind(&mut viewer, kind::CONFIG_ACK).await;
    assert_eq!(ack.payload["config"]["summarization_enabled"], false);
    speaker.send(kind::AUDIO, audio("f03")).await.unwrap();
    let cap = expect_kind(&mut viewer, kind::CAPTION_FINAL).await;
    let c = &cap.payload["caption"];
    assert_eq!(c["summarization_enabled"], false);
    assert_eq!(c["summarized_text"], c["translated_text"]);
    assert_eq!(c["sigma_measured"], 1.0);
    assert_eq!(cap.payload["savings_s"], 0.0);
}

#[tokio::test]
async fn viewers_receive_identical_captions() {
    let (_server, addr) = start(pipeline(&[], None, mono()), quiet_settings()).await;
    let (mut a, _) = join(addr, "room", "viewer").await;
    let (mut b, _) = join(addr, "room", "viewer").await;
    let (mut speaker, _) = join(addr, "room", "speaker").await;
    for id in ["f04", "f05", "f06"] {
        speaker.send(kind::AUDIO, audio(id)).await.unwrap();
    }
    let corpus = corpus();
    for (i, id) in ["f04", "f05", "f06"].iter().enumerate() {
        let fa = expect_kind(&mut a, kind::CAPTION_FINAL).await;
        let fb = expect_kind(&mut b, kind::CAPTION_FINAL).await;
        assert_eq!(fa.payload, fb.payload);
        assert_eq!(fa.payload["caption"]["utterance_id"], i as u64 + 1);
        assert_eq!(fa.payload["caption"]["source_text"], corpus[*id].as_str());
    }
}

#[tokio::test]
async fn captions_without_viewers_are_still_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(DataStore::open(dir.path()).unwrap());
    let (server, addr) = start(pipeline(&[], Some(store.clone()), mono()), quiet_settings()).await;
    let (mut speaker, _) = join(addr, "room", "speaker").await;
    for id in ["f07", "f08", "f09"] {
        speaker.send(kind::AUDIO, audio(id)).await.unwrap();
    }
    assert!(eventually(|| store.len() == 3).await);
    let metrics = server.state().session_metrics("room").unwrap();
    assert_eq!(metrics.captions, 3);
    assert_eq!(metrics.viewers, 0);
    let texts: Vec<_> = store.records().into_iter().map(|r| r.source_text).collect();
    let corpus = corpus();
    assert_eq!(
        texts,
        vec![corpus["f07"].clone(), corpus["f08"].clone(), corpus["f09"].clone()]
    );
}

#[tokio::test]
async fn late_viewer_sees_current_config_and_later_captions_only() {
    let (_server, addr) = start(pipeline(&[], None, mono()), quiet_settings()).await;
    let (mut early, _) = join(addr, "room", "viewer").await;
    let (mut speaker, _) = join(addr, "room", "speaker").await;
    early.send(kind::SET_SIGMA, json!({"target_sigma": 0.4})).await.unwrap();
    expect_kind(&mut early, kind::CONFIG_ACK).await;
    speaker.send(kind::AUDIO, audio("f10")).await.unwrap();
    expect_kind(&mut early, kind::CAPTION_FINAL).await;

    let (mut late, ack) = join(addr, "room", "viewer").await;
    assert_eq!(ack.payload["config"]["target_sigma"], 0.4);
    speaker.send(kind::AUDIO, audio("f11")).await.unwrap();
    let cap = expect_kind(&mut late, kind::CAPTION_FINAL).await;
    assert_eq!(cap.payload["caption"]["utterance_id"], 2);
    assert_eq!(expect_kind(&mut early, kind::CAPTION_FINAL).await.payload, cap.payload);
}

#[tokio::test]
async fn partial_audio_is_forwarded_as_transcript() {
    let (_server, addr) = start(pipeline(&[], None, mono()), quiet_settings()).await;
    let (mut viewer, _) = join(addr, "room", "viewer").await;
    let (mut speaker, _) = join(addr, "room", "speaker").await;
    speaker
        .send(
            kind::AUDIO,
            json!({"fixture": "f12", "partial": true, "speaker_label": "alice"}),
        )
        .await
        .unwrap();
    let partial = expect_kind(&mut viewer, kind::TRANSCRIPT_PARTIAL).await;
    assert_eq!(partial.payload["text"], corpus()["f12"].as_str());
    assert_eq!(partial.payload["speaker_label"], "alice");
}

#[tokio::test]
async fn failures_and_skips_are_reported_to_the_speaker() {
    let asr = ProviderDescriptor::new("table-asr", ProviderKind::Asr, ProviderMode::Mock)
        .param("fixture_table", json!({"blank": "   ", "ok": "hello there"}));
    let mut settings = quiet_settings();
    settings.default_session.provider_ids.asr = "table-asr".into();
    let (server, addr) = start(pipeline(&[asr], None, mono()), settings).await;
    let (mut speaker, _) = join(addr, "room", "speaker").await;
    speaker.send(kind::AUDIO, audio("blank")).await.unwrap();
    let skipped = expect_kind(&mut speaker, kind::ERROR).await;
    assert_eq!(error_code(&skipped), code::SKIPPED);
    assert_eq!(skipped.payload["utterance_id"], 1);
    speaker.send(kind::AUDIO, audio("missing")).await.unwrap();
    let failed = expect_kind(&mut speaker, kind::ERROR).await;
    assert_eq!(error_code(&failed), code::STAGE_FAILED);
    assert_eq!(failed.payload["stage"], "asr");
    let m = server.state().session_metrics("room").unwrap();
    assert_eq!((m.skipped, m.failures, m.captions), (1, 1, 0));
}

#[tokio::test]
async fn corrections_are_acknowledged_and_stored() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(DataStore::open(dir.path()).unwrap());
    let (_server, addr) = start(pipeline(&[], Some(store.clone()), mono()), quiet_settings()).await;
    let (mut viewer, _) = join(addr, "room", "viewer").await;
    let (mut speaker, _) = join(addr, "room", "speaker").await;
    speaker.send(kind::AUDIO, audio("f13")).await.unwrap();
    let cap = expect_kind(&mut viewer, kind::CAPTION_FINAL).await;
    let record_id = cap.payload["caption"]["record_id"].as_u64().unwrap();

    viewer
        .send(
            kind::CORRECTION,
            json!({"utterance_id": 1, "corrected_summary": "tgt:fixed"}),
        )
        .await
        .unwrap();
    let ack = expect_kind(&mut viewer, kind::CORRECTION_ACK).await;
    assert_eq!(ack.payload["record_id"], record_id);
    assert_eq!(store.corrections().len(), 1);
    assert_eq!(store.corrections()[0].corrected_summary, "tgt:fixed");

    viewer
        .send(kind::CORRECTION, json!({"utterance_id": 99, "corrected_summary": "x"}))
        .await
        .unwrap();
    assert_eq!(error_code(&expect_kind(&mut viewer, kind::ERROR).await), code::DANGLING);
}

#[tokio::test]
async fn heartbeat_silence_disconnects() {
    let settings = ServerSettings {
        heartbeat_interval_ms: 100,
        ..quiet_settings()
    };
    let (_server, addr) = start(pipeline(&[], None, mono()), settings).await;
    let (mut c, _) = join(addr, "room", "viewer").await;
    let mut saw_heartbeat = false;
    let mut saw_metrics = false;
    let last = tokio::time::timeout(WAIT, async {
        loop {
            let f = c.recv().await.unwrap().expect("error frame before close");
            match f.kind.as_str() {
                kind::HEARTBEAT => saw_heartbeat = true,
                kind::METRICS => saw_metrics = true,
                _ => return f,
            }
        }
    })
    .await
    .unwrap();
    assert!(saw_heartbeat && saw_metrics);
    assert_eq!(error_code(&last), code::HEARTBEAT_TIMEOUT);
    assert!(c.recv().await.unwrap().is_none());
}

#[tokio::test]
async fn heartbeats_keep_a_connection_alive() {
    let settings = ServerSettings {
        heartbeat_interval_ms: 100,
        ..quiet_settings()
    };
    let (_server, addr) = start(pipeline(&[], None, mono()), settings).await;
    let (mut c, _) = join(addr, "room", "speaker").await;
    for _ in 0..6 {
        tokio::time::sleep(Duration::from_millis(80)).await;
        c.send(kind::HEARTBEAT, json!({})).await.unwrap();
    }
    c.send(kind::SET_DISPLAY_MODE, json!({"mode": "x"})).await.unwrap();
    expect_kind(&mut c, kind::CONFIG_ACK).await;
}

#[tokio::test]
async fn slow_viewer_is_evicted_with_backpressure() {
    let long: String = (0..20_000).map(|i| format!("w{i} ")).collect();
    let asr = ProviderDescriptor::new("long-asr", ProviderKind::Asr, ProviderMode::Mock)
        .param("fixture_table", json!({ "long": long }));
    let mut settings = quiet_settings();
    settings.viewer_buffer = 2;
    settings.default_session.provider_ids.asr = "long-asr".into();
    // Virtual time keeps the pipeline from sleeping.
    let (server, addr) = start(pipeline(&[asr], None, Arc::new(VirtualClock::new())), settings).await;

    // A raw viewer that joins and then never reads.
    let mut stalled = tokio::net::TcpStream::connect(addr).await.unwrap();
    let hello = Frame::new(kind::HELLO, "room", 1, json!({"client_kind": "viewer"}));
    stalled
        .write_all(&encode_body(hello.to_json().as_bytes()).unwrap())
        .await
        .unwrap();
    let (mut speaker, _) = join(addr, "room", "speaker").await;
    assert!(eventually(|| server.state().session_metrics("room").map(|m| m.viewers) == Some(1)).await);

    let mut sent = 0;
    while server.state().session_metrics("room").unwrap().viewers == 1 {
        assert!(sent < 400, "viewer never evicted");
        speaker.send(kind::AUDIO, audio("long")).await.unwrap();
        sent += 1;
        tokio::time::sleep(Duration::from_millis(2)).await;
    }

    let last = tokio::time::timeout(WAIT, async {
        let mut last = None;
        while let ReadOutcome::Body(body) = read_body(&mut stalled).await.unwrap() {
            last = Some(Frame::parse(&body).unwrap());
        }
        last
    })
    .await
    .unwrap()
    .unwrap();
    assert_eq!(error_code(&last), code::BACKPRESSURE);
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn ws_next(ws: &mut Ws) -> Frame {
    loop {
        match ws.next().await.unwrap().unwrap() {
            Message::Text(t) => return Frame::parse(t.as_bytes()).unwrap(),
            Message::Ping(_) | Message::Pong(_) => continue,
            other => panic!("expected a text frame, got {other:?}"),
        }
    }
}

#[tokio::test]
async fn websocket_clients_exchange_text_frames() {
    let (server, _) = start(pipeline(&[], None, mono()), quiet_settings()).await;
    let (ws_addr, _) = server.listen_ws("127.0.0.1:0").await.unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{ws_addr}"))
        .await
        .unwrap();
    let hello = Frame::new(kind::HELLO, "room", 1, json!({"client_kind": "speaker"}));
    ws.send(Message::Text(hello.to_json().into())).await.unwrap();

    let ack = ws_next(&mut ws).await;
    assert_eq!(ack.kind, kind::CONFIG_ACK);
    assert_eq!(ack.payload["client_kind"], "speaker");

    // Speakers over TCP and viewers over WebSocket share a session.
    let (tcp_addr, _) = server.listen_tcp("127.0.0.1:0").await.unwrap();
    let (mut viewer, _) = join(tcp_addr, "room", "viewer").await;
    ws.send(Message::Text(
        Frame::new(kind::AUDIO, "room", 2, audio("f14")).to_json().into(),
    ))
    .await
    .unwrap();
    let cap = expect_kind(&mut viewer, kind::CAPTION_FINAL).await;
    assert_eq!(cap.payload["caption"]["source_text"], corpus()["f14"].as_str());

    ws.send(Message::Text("garbage".into())).await.unwrap();
    assert_eq!(error_code(&ws_next(&mut ws).await), code::BAD_FRAME);
}

#[tokio::test]
async fn oversized_frames_are_discarded_with_an_error() {
    let (_server, addr) = start(pipeline(&[], None, mono()), quiet_settings()).await;
    let (mut c, _) = join(addr, "room", "speaker").await;
    let len = sumcap::protocol::MAX_FRAME_LEN + 1;
    c.send_raw(&vec![b' '; len]).await.unwrap_err();
    let mut raw = tokio::net::TcpStream::connect(addr).await.unwrap();
    raw.write_all(&(len as u32).to_be_bytes()).await.unwrap();
    raw.write_all(&vec![b' '; len]).await.unwrap();
    match read_body(&mut raw).await.unwrap() {
        ReadOutcome::Body(b) => assert_eq!(error_code(&Frame::parse(&b).unwrap()), code::TOO_LARGE),
        other => panic!("{other:?}"),
    }
    c.send(kind::SET_DISPLAY_MODE, json!({"mode": "x"})).await.unwrap();
    expect_kind(&mut c, kind::CONFIG_ACK).await;
}
