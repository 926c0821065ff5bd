use std::collections::BTreeMap;
use std::sync::Arc;

use grec_client::{Client, ClientError, SubmitOutcome};
use grec_core::catalog::{Cart, CartEntry};
use grec_core::ohseval::{default_criteria, Domain, EvaluationSheet, RawScoreEntry, ScoreSubmission, SheetQuery};
use grec_service::{run, AppState, ServiceConfig};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

struct Server {
    _dir: tempfile::TempDir,
    client: Client,
    stop: Option<oneshot::Sender<()>>,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

async fn start() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut manifest = String::new();
    let mut csv = String::from("id,dim=2\n");
    for i in 0..12 {
        let angle = f64::from(i) * 0.25;
        manifest.push_str(&format!("{{\"id\":\"item {i}\",\"image\":\"{i}.jpg\",\"labels\":[\"dress\"]}}\n"));
        csv.push_str(&format!("item {i},{},{}\n", angle.cos(), angle.sin()));
    }
    std::fs::write(p.join("m.jsonl"), manifest).unwrap();
    std::fs::write(p.join("e.csv"), csv).unwrap();
    std::fs::create_dir(p.join("sheets")).unwrap();
    EvaluationSheet {
        sheet_id: "pilot/1".into(),
        criteria: default_criteria(),
        systems: vec!["base".into()],
        queries: vec![SheetQuery {
            query_id: "q".into(),
            image: "q.jpg".into(),
            domain: Domain::Shop,
            results: [("base".to_string(), vec!["item 1".to_string()])].into(),
        }],
    }
    .save(p.join("sheets/pilot.json"))
    .unwrap();
    let config = ServiceConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        manifest: p.join("m.jsonl"),
        embeddings: Some(p.join("e.csv")),
        index: None,
        sheets_dir: Some(p.join("sheets")),
        scores: p.join("scores.jsonl"),
        static_dir: None,
    };
    let state = Arc::new(AppState::load(&config).unwrap());
    let listener = TcpListener::bind(config.listen).await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = oneshot::channel();
    let handle = tokio::spawn(run(listener, state, async {
        let _ = rx.await;
    }));
    Server { _dir: dir, client: Client::new(&format!("http://{addr}/")).unwrap(), stop: Some(tx), handle }
}

impl Server {
    async fn shutdown(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.handle.await.unwrap().unwrap();
    }
}

fn submission(scorer: &str, score: i64) -> ScoreSubmission {
    ScoreSubmission {
        sheet_id: "pilot/1".into(),
        scorer_id: scorer.into(),
        entries: default_criteria()
            .into_iter()
            .map(|c| RawScoreEntry { query_id: "q".into(), system: "base".into(), criterion: c.name, score: score.into() })
            .collect(),
    }
}

#[tokio::test]
async fn round_trip_through_every_endpoint() {
    let s = start().await;
    let c = &s.client;
    assert_eq!(c.health().await.unwrap(), "ok");

    let info = c.item("item 3").await.unwrap();
    assert_eq!(info.labels, ["dress"]);
    assert!(matches!(c.item("missing").await, Err(ClientError::Status { status: 404, .. })));

    let recs = c.recommend_item("item 5", 3, vec!["item 5".into()]).await.unwrap();
    let ids: Vec<&str> = recs.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["item 4", "item 6", "item 3"]);

    let cart = Cart::new("u", vec![CartEntry { id: "item 0".into(), rating: 5.0 }]).unwrap();
    let recs = c.cart_recommend(&cart, 2).await.unwrap();
    assert_eq!(recs[0].id, "item 1");

    assert_eq!(c.sheets().await.unwrap(), ["pilot/1"]);
    assert_eq!(c.sheet("pilot/1").await.unwrap().systems, ["base"]);

    match c.submit_scores("pilot/1", &submission("ann", 12)).await.unwrap() {
        SubmitOutcome::Rejected(v) => assert_eq!(v.len(), 7),
        other => panic!("{other:?}"),
    }
    match c.submit_scores("pilot/1", &submission("ann", 9)).await.unwrap() {
        SubmitOutcome::Accepted(a) => assert_eq!(a.entries, 7),
        other => panic!("{other:?}"),
    }
    let agg = c.aggregate("pilot/1", None).await.unwrap();
    assert_eq!(agg.ohs, [Some(90.0)]);
    let mut w: BTreeMap<String, f64> = default_criteria().into_iter().map(|c| (c.name, 0.0)).collect();
    w.insert("Shape Difference".into(), 2.0);
    assert_eq!(c.aggregate("pilot/1", Some(&w)).await.unwrap().ohs, [Some(90.0)]);
    w.insert("Shape Difference".into(), 0.0);
    assert_eq!(c.aggregate("pilot/1", Some(&w)).await.unwrap_err().status(), Some(400));

    s.shutdown().await;
}

#[test]
fn rejects_bad_base_url() {
    assert!(Client::new("localhost:80").is_err());
}
