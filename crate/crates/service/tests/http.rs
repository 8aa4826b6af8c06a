use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

async fn start() -> std::net::SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(wuglab_service::serve(listener));
    addr
}

/// Minimal HTTP/1.1 exchange; returns (status, body).
async fn request(addr: std::net::SocketAddr, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).await.unwrap();
    let msg = format!(
        "{method} {path} HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    s.write_all(msg.as_bytes()).await.unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).await.unwrap();
    let status = raw[9..12].parse().unwrap();
    let (head, rest) = raw.split_once("\r\n\r\n").unwrap();
    let body = if head.to_ascii_lowercase().contains("transfer-encoding: chunked") { dechunk(rest) } else { rest.to_string() };
    (status, body)
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let (len, rest) = s.split_once("\r\n").unwrap();
        let n = usize::from_str_radix(len.trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
}

#[tokio::test]
async fn health_and_forge() {
    let addr = start().await;
    let (st, body) = request(addr, "GET", "/health", "").await;
    assert_eq!(st, 200);
    assert!(body.contains("\"ok\""));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.jsonl");
    let req = serde_json::json!({ "mode": "tag", "count": 3, "start_id": 4, "out": out });
    let (st, body) = request(addr, "POST", "/forge", &req.to_string()).await;
    assert_eq!(st, 200, "{body}");
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["count"], 3);
    assert_eq!(v["sample"][0], "<wug#4>");
    assert_eq!(std::fs::read_to_string(out).unwrap().lines().count(), 3);
}

#[tokio::test]
async fn errors_are_json() {
    let addr = start().await;
    let req = serde_json::json!({ "wugs": "/nonexistent/wugs.jsonl", "out_dir": "/tmp/never" });
    let (st, body) = request(addr, "POST", "/gen", &req.to_string()).await;
    assert_eq!(st, 404);
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert!(v["error"].as_str().unwrap().contains("/nonexistent/wugs.jsonl"));

    let dir = tempfile::tempdir().unwrap();
    let req = serde_json::json!({ "store": dir.path(), "out_dir": dir.path().join("r") });
    let (st, _) = request(addr, "POST", "/report", &req.to_string()).await;
    assert!(st == 400 || st == 404, "{st}");

    let (st, _) = request(addr, "POST", "/forge", "{not json").await;
    assert!((400..500).contains(&st));
    let (st, _) = request(addr, "GET", "/nope", "").await;
    assert_eq!(st, 404);
}
