//! Drives the HTTP routes in-process: create a session, ask for
//! suggestions, pick one and export the mesh.

use std::collections::BTreeMap;

use axum::body::Body;
use axum::http::Request;
use partsynth::dataset::{make_dataset, Category};
use partsynth::pipeline::{train_all, PipelineConfig};
use partsynth::psn::Kind;
use partsynth::service::{router, AppState, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(state: &AppState, method: &str, uri: &str, body: Option<Value>) -> (u16, String) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, String::from_utf8_lossy(&bytes).into_owned())
}

#[tokio::main]
async fn main() -> partsynth::Result<()> {
    let data = make_dataset(Category::Chair, 10, 1, 16)?;
    let models = train_all(&data, &PipelineConfig::smoke(Kind::Cimle))?.models;
    let state = AppState::new(BTreeMap::from([(Kind::Cimle, models)]), ServiceConfig::default());

    let (status, body) = call(&state, "POST", "/sessions", Some(json!({"seed": 3, "k": 3}))).await;
    let id = serde_json::from_str::<Value>(&body)?["id"].as_str().unwrap().to_owned();
    println!("POST /sessions -> {status}, id {id}");

    let (status, body) = call(&state, "POST", &format!("/sessions/{id}/nodes/0/propose"), Some(json!({"seed": 1}))).await;
    let items = serde_json::from_str::<Value>(&body)?["items"].as_array().unwrap().len();
    println!("propose -> {status}, {items} suggestions");

    let (status, _) = call(&state, "POST", &format!("/sessions/{id}/nodes/0/select"), Some(json!({"index": 1}))).await;
    println!("select -> {status}");
    let (status, obj) = call(&state, "GET", &format!("/sessions/{id}/nodes/1/mesh?res=32"), None).await;
    println!("mesh -> {status}, {} OBJ lines", obj.lines().count());
    let (status, body) = call(&state, "GET", &format!("/sessions/{id}/nodes/1/mesh?res=4"), None).await;
    println!("mesh at R=4 -> {status} {body}");
    Ok(())
}
