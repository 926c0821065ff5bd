use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use grec_core::ohseval::{default_criteria, Domain, EvaluationSheet, SheetQuery};
use grec_service::{router, AppState, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    config: ServiceConfig,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let vectors = [
        ("a", [1.0, 0.0, 0.0]),
        ("b", [0.9, 0.1, 0.0]),
        ("c", [0.0, 1.0, 0.0]),
        ("d", [0.0, 0.9, 0.2]),
        ("e", [0.0, 0.0, 1.0]),
        ("f", [0.5, 0.5, 0.5]),
    ];
    let mut manifest = String::new();
    let mut csv = String::from("id,dim=3\n");
    for (id, v) in &vectors {
        manifest.push_str(&format!("{{\"id\":\"{id}\",\"image\":\"{id}.png\",\"labels\":[\"top\"],\"split\":\"test\"}}\n"));
        csv.push_str(&format!("{id},{},{},{}\n", v[0], v[1], v[2]));
    }
    std::fs::write(p.join("catalog.jsonl"), manifest).unwrap();
    std::fs::write(p.join("emb.csv"), csv).unwrap();
    std::fs::write(p.join("a.png"), b"not really a png").unwrap();
    std::fs::create_dir(p.join("sheets")).unwrap();
    std::fs::create_dir(p.join("ui")).unwrap();
    std::fs::write(p.join("ui/index.html"), "<html>scorer</html>").unwrap();
    let sheet = EvaluationSheet {
        sheet_id: "X".into(),
        criteria: default_criteria(),
        systems: vec!["sysA".into(), "sysB".into()],
        queries: vec![SheetQuery {
            query_id: "q1".into(),
            image: "q1.png".into(),
            domain: Domain::Street,
            results: [("sysA".to_string(), vec!["a".to_string()]), ("sysB".to_string(), vec!["b".to_string()])].into(),
        }],
    };
    sheet.save(p.join("sheets/x.json")).unwrap();
    let config = ServiceConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        manifest: p.join("catalog.jsonl"),
        embeddings: Some(p.join("emb.csv")),
        index: None,
        sheets_dir: Some(p.join("sheets")),
        scores: p.join("store/scores.jsonl"),
        static_dir: Some(p.join("ui")),
    };
    Fixture { _dir: dir, config }
}

fn app(f: &Fixture) -> Router {
    router(Arc::new(AppState::load(&f.config).unwrap()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn health_is_ok() {
    let f = fixture();
    let (status, body) = call(&app(&f), "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"ok");
}

#[tokio::test]
async fn item_metadata_and_image() {
    let f = fixture();
    let app = app(&f);
    let (status, body) = call(&app, "GET", "/items/a", None).await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    assert_eq!(v["labels"], json!(["top"]));
    assert_eq!(v["split"], "test");
    assert_eq!(v["has_embedding"], true);
    let (status, body) = call(&app, "GET", "/items/a/image", None).await;
    assert_eq!((status, body.as_slice()), (StatusCode::OK, b"not really a png".as_slice()));
    assert_eq!(call(&app, "GET", "/items/zzz", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/items/b/image", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn recommend_by_item() {
    let f = fixture();
    let app = app(&f);
    let req = json!({"item_id": "a", "k": 4}).to_string();
    let (status, body) = call(&app, "POST", "/recommend", Some(req.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let results = json_of(&body)["results"].as_array().unwrap().clone();
    assert_eq!(results.len(), 4);
    assert_eq!(results[0]["id"], "a");
    let scores: Vec<f64> = results.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    // Pure query path: identical requests give identical bodies.
    assert_eq!(call(&app, "POST", "/recommend", Some(req)).await.1, body);

    let (_, body) = call(&app, "POST", "/recommend", Some(json!({"item_id": "a", "k": 2, "exclude": ["a"]}).to_string())).await;
    assert_eq!(json_of(&body)["results"][0]["id"], "b");
}

#[tokio::test]
async fn recommend_by_embedding_and_errors() {
    let f = fixture();
    let app = app(&f);
    let (status, body) = call(&app, "POST", "/recommend", Some(json!({"embedding": [0.0, 0.0, 2.0], "k": 1}).to_string())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&body)["results"][0]["id"], "e");

    for bad in [
        "{not json".to_string(),
        json!({"k": 3}).to_string(),
        json!({"item_id": "a", "embedding": [1.0, 0.0, 0.0], "k": 3}).to_string(),
        json!({"item_id": "a", "k": 0}).to_string(),
        json!({"embedding": [1.0, 0.0], "k": 3}).to_string(),
    ] {
        let (status, body) = call(&app, "POST", "/recommend", Some(bad.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert!(json_of(&body)["error"].is_string());
    }
    let (status, _) = call(&app, "POST", "/recommend", Some(json!({"item_id": "nope", "k": 3}).to_string())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cart_recommend_excludes_cart() {
    let f = fixture();
    let app = app(&f);
    let cart = json!({"user_id": "u", "items": [{"id": "a", "rating": 4}, {"id": "c", "rating": 1}]});
    let (status, body) = call(&app, "POST", "/cart/recommend", Some(json!({"cart": cart, "k": 3}).to_string())).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<String> =
        json_of(&body)["results"].as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap().to_owned()).collect();
    assert_eq!(ids.len(), 3);
    assert_eq!(ids[0], "b");
    assert!(!ids.contains(&"a".to_string()) && !ids.contains(&"c".to_string()));

    let bad_rating = json!({"cart": {"user_id": "u", "items": [{"id": "a", "rating": 9}]}, "k": 3});
    assert_eq!(call(&app, "POST", "/cart/recommend", Some(bad_rating.to_string())).await.0, StatusCode::BAD_REQUEST);
    let unknown = json!({"cart": {"user_id": "u", "items": [{"id": "ghost", "rating": 3}]}, "k": 3});
    assert_eq!(call(&app, "POST", "/cart/recommend", Some(unknown.to_string())).await.0, StatusCode::NOT_FOUND);
}

fn entries(score: Value) -> Vec<Value> {
    default_criteria()
        .iter()
        .flat_map(|c| {
            let score = score.clone();
            ["sysA", "sysB"].map(move |s| json!({"query_id": "q1", "system": s, "criterion": c.name, "score": score}))
        })
        .collect()
}

#[tokio::test]
async fn sheet_scoring_flow() {
    let f = fixture();
    let app = app(&f);
    let (status, body) = call(&app, "GET", "/sheets/X", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&body)["queries"][0]["domain"], "street");
    assert_eq!(call(&app, "GET", "/sheets/nope", None).await.0, StatusCode::NOT_FOUND);

    let mut bad = entries(json!(5));
    bad[0]["score"] = json!(11);
    let sub = json!({"sheet_id": "X", "scorer_id": "ann", "entries": bad});
    let (status, body) = call(&app, "POST", "/sheets/X/scores", Some(sub.to_string())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let v = json_of(&body);
    assert_eq!(v["violations"][0]["kind"], "out_of_range");
    assert!(v["violations"][0]["message"].as_str().unwrap().contains("out of range"));
    assert_eq!(call(&app, "POST", "/sheets/X/scores", Some("[".into())).await.0, StatusCode::BAD_REQUEST);

    let sub = json!({"sheet_id": "X", "scorer_id": "ann", "entries": entries(json!(8))});
    let (status, body) = call(&app, "POST", "/sheets/X/scores", Some(sub.to_string())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(json_of(&body)["entries"], 14);
    let sub = json!({"sheet_id": "X", "scorer_id": "bob", "entries": entries(json!(6))});
    assert_eq!(call(&app, "POST", "/sheets/X/scores", Some(sub.to_string())).await.0, StatusCode::CREATED);

    let (status, body) = call(&app, "GET", "/sheets/X/aggregate", None).await;
    assert_eq!(status, StatusCode::OK);
    let agg = json_of(&body);
    assert_eq!(agg["ohs"], json!([70.0, 70.0]));
    assert_eq!(agg["gaps"], json!([]));

    let (status, body) = call(&app, "GET", "/sheets/X/aggregate?weights=Category:1", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{}", String::from_utf8_lossy(&body));
    let all_but_color: String = default_criteria()
        .iter()
        .map(|c| format!("{}:{}", c.name.replace(' ', "%20"), if c.name == "Color" { 1 } else { 0 }))
        .collect::<Vec<_>>()
        .join(",");
    let (status, body) = call(&app, "GET", &format!("/sheets/X/aggregate?weights={all_but_color}"), None).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    assert_eq!(json_of(&body)["ohs"], json!([70.0, 70.0]));

    // Records survive a restart through the append-only file.
    let restarted = AppState::load(&f.config).unwrap();
    assert_eq!(restarted.scores.len().await, 2);
    let lines = std::fs::read_to_string(&f.config.scores).unwrap();
    assert_eq!(lines.lines().count(), 2);
}

#[tokio::test]
async fn concurrent_submissions_are_all_stored() {
    let f = fixture();
    let state = Arc::new(AppState::load(&f.config).unwrap());
    let app = router(state.clone());
    let mut handles = Vec::new();
    for i in 0..16 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let sub = json!({"sheet_id": "X", "scorer_id": format!("s{i}"), "entries": entries(json!(i % 11))});
            call(&app, "POST", "/sheets/X/scores", Some(sub.to_string())).await.0
        }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap(), StatusCode::CREATED);
    }
    assert_eq!(state.scores.len().await, 16);
    let text = std::fs::read_to_string(&f.config.scores).unwrap();
    assert!(text.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
}

#[tokio::test]
async fn ui_assets_are_served() {
    let f = fixture();
    let (status, body) = call(&app(&f), "GET", "/ui/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>scorer</html>");
}

#[test]
fn startup_requires_vectors() {
    let f = fixture();
    let cfg = ServiceConfig { embeddings: None, ..f.config.clone() };
    assert!(AppState::load(&cfg).is_err());
}
