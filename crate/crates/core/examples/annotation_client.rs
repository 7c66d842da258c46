//! Start the annotation service in-process and drive it over HTTP the way
//! the labeling UI does: create a session, fetch batches, submit labels for
//! two annotators and finalize.
//!
//!     cargo run --example annotation_client

use std::collections::BTreeMap;
use std::sync::Arc;

use fhlr::annotation::{router, DatasetRegistry, SessionStore};
use fhlr::datasets::{make_synthetic, write_canonical, SyntheticSpec};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

// Minimal HTTP/1.1 client: one request per connection.
async fn request(addr: std::net::SocketAddr, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
    let mut stream = TcpStream::connect(addr).await.expect("connect");
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    let head = format!(
        "{method} {path} HTTP/1.1\r\nhost: {addr}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
        body.len()
    );
    stream.write_all(head.as_bytes()).await.unwrap();
    stream.write_all(body.as_bytes()).await.unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).await.unwrap();
    let (head, payload) = raw.split_once("\r\n\r\n").unwrap_or((&raw, ""));
    let status = head.split_whitespace().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    (status, serde_json::from_str(payload).unwrap_or(Value::Null))
}

#[tokio::main]
async fn main() -> fhlr::Result<()> {
    let root = std::path::PathBuf::from("target/example_runs/annotation");
    let _ = std::fs::remove_dir_all(&root);
    let (train, test) = make_synthetic(&SyntheticSpec {
        num_classes: 3,
        channels: 2,
        window_length: 50,
        train_count: 30,
        test_count: 6,
        class_separability: 1.0,
        noise_floor: 0.5,
        rng_seed: 1,
        num_subjects: 0,
    })?;
    let truth = train.y.clone();
    let splits = BTreeMap::from([("train".to_string(), train), ("test".to_string(), test)]);
    write_canonical(root.join("datasets/wear"), "wear", 50.0, &splits)?;

    let store = SessionStore::open(root.join("store"), DatasetRegistry::scan(&root.join("datasets"))?)
        .map_err(|e| fhlr::Error::Runtime(e.to_string()))?;
    let listener = TcpListener::bind("127.0.0.1:0").await.map_err(|e| fhlr::Error::Runtime(e.to_string()))?;
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(Arc::new(store))).await });
    println!("service on http://{addr}");

    let (_, datasets) = request(addr, "GET", "/datasets", None).await;
    println!("datasets: {datasets}");
    let (status, session) = request(
        addr,
        "POST",
        "/sessions",
        Some(json!({"dataset": {"name": "wear", "split": "train"}, "indices": [4, 9, 13, 21, 27, 2]})),
    )
    .await;
    let id = session["session_id"].as_str().expect("session id").to_string();
    println!("created session {id} ({status})");

    for (annotator, sloppy) in [("ana", false), ("ben", true)] {
        loop {
            let (_, batch) = request(addr, "GET", &format!("/sessions/{id}/batch?annotator={annotator}&size=4"), None).await;
            let items = batch.as_array().cloned().unwrap_or_default();
            if items.is_empty() {
                break;
            }
            let labels: Vec<Value> = items
                .iter()
                .map(|it| {
                    let i = it["index"].as_u64().unwrap() as usize;
                    let label = if sloppy && i % 2 == 0 { (truth[i] + 1) % 3 } else { truth[i] };
                    json!({"index": i, "label": label})
                })
                .collect();
            let first = &items[0];
            println!(
                "{annotator}: window {} has {} channels of {} samples at {} Hz",
                first["index"],
                first["channels"].as_array().map_or(0, Vec::len),
                first["channels"][0].as_array().map_or(0, Vec::len),
                first["sample_rate_hz"]
            );
            let (_, ack) = request(addr, "POST", &format!("/sessions/{id}/labels"), Some(json!({"annotator": annotator, "labels": labels}))).await;
            println!("{annotator}: {ack}");
        }
    }
    let (_, progress) = request(addr, "GET", &format!("/sessions/{id}/progress"), None).await;
    println!("progress: {progress}");
    let (status, done) = request(addr, "POST", &format!("/sessions/{id}/finalize"), None).await;
    println!("finalize ({status}): kappa {} -> {}", done["kappa"], done["path"]);
    println!("expert set: {}", done["expert_set"]);
    let (status, again) = request(addr, "POST", &format!("/sessions/{id}/labels"), Some(json!({"annotator": "ana", "labels": []}))).await;
    println!("submitting after finalize: {status} {again}");
    Ok(())
}
