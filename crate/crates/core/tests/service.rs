mod common;

use std::time::Duration;

use axum::http::{Method, StatusCode};
use axum::Router;
use common::http::{call, get, post, post_empty};
use common::{bool_model, listnat_model};
use proofminer::service::{router, ServiceState, DEFAULT_TTL};
use serde_json::{json, Value};

async fn app_with(model: &proofminer::Efsm) -> (Router, String) {
    let app = router(ServiceState::new(DEFAULT_TTL));
    let r = call(&app, Method::POST, "/models", Some(model.to_json())).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    let v = r.json();
    assert_eq!(v["states"], model.state_count());
    (app, v["id"].as_str().unwrap().to_string())
}

async fn open(app: &Router, model: &str) -> String {
    let r = post_empty(app, &format!("/models/{model}/sessions")).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    let v = r.json();
    assert_eq!(v["model"], model);
    assert_eq!(v["session"]["script"], "");
    v["id"].as_str().unwrap().to_string()
}

async fn step(app: &Router, session: &str, body: Value) -> Value {
    let r = post(app, &format!("/sessions/{session}/step"), &body).await;
    assert_eq!(r.status, StatusCode::OK, "{body}: {}", r.text);
    r.json()
}

fn option_methods(v: &Value) -> Vec<String> {
    let mut out: Vec<String> = v["suggestions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            let l = s["label"].as_str().unwrap();
            l.strip_suffix("_0").unwrap_or(l).to_string()
        })
        .collect();
    out.sort();
    out
}

#[tokio::test]
async fn listnat_walk_over_http() {
    let (app, model) = app_with(&listnat_model()).await;
    let s = open(&app, &model).await;

    let options = get(&app, &format!("/sessions/{s}/options")).await.json();
    assert_eq!(option_methods(&options), ["induction", "intros"]);
    assert_eq!(options["canFinish"], false);

    for body in [
        json!({"label": "induction", "params": ["l"]}),
        json!({"label": "trivial_0"}),
        json!({"label": "simpl_0"}),
        json!({"label": "rewrite", "params": ["<- IHl"]}),
        json!({"label": "trivial_0", "params": [], "combined": false}),
    ] {
        let v = step(&app, &s, body).await;
        assert!(v.get("advisory").is_some());
    }
    let script = get(&app, &format!("/sessions/{s}/script")).await.json();
    assert_eq!(
        script["script"],
        "induction l. trivial. simpl. rewrite <- IHl. trivial."
    );
    assert_eq!(script["accepting"], true);
    assert_eq!(script["history"].as_array().unwrap().len(), 5);
    assert_eq!(script["history"][0]["params"][0], "l");
}

#[tokio::test]
async fn bool_walk_with_undo_over_http() {
    let (app, model) = app_with(&bool_model()).await;
    let s = open(&app, &model).await;
    step(&app, &s, json!({"label": "intros_0"})).await;
    let undone = post_empty(&app, &format!("/sessions/{s}/undo")).await;
    assert_eq!(undone.status, StatusCode::OK);
    let v = undone.json();
    assert_eq!(v["removed"], "intros");
    assert_eq!(v["script"], "");
    assert_eq!(v["state"], 0);

    for (label, params) in [
        ("destruct", json!(["b1"])),
        ("destruct", json!(["b2"])),
        ("simpl", json!(["in |- *"])),
    ] {
        step(
            &app,
            &s,
            json!({"label": label, "params": params, "combined": true}),
        )
        .await;
    }
    let last = step(&app, &s, json!({"label": "trivial_0"})).await;
    assert_eq!(last["accepting"], true);
    assert_eq!(
        last["script"],
        "destruct b1; destruct b2; simpl in |- *; trivial."
    );
}

#[tokio::test]
async fn sessions_are_independent() {
    let (app, model) = app_with(&listnat_model()).await;
    let a = open(&app, &model).await;
    let b = open(&app, &model).await;
    assert_ne!(a, b);
    step(&app, &a, json!({"label": "induction", "params": ["l"]})).await;
    let sb = get(&app, &format!("/sessions/{b}/script")).await.json();
    assert_eq!(sb["script"], "");
    assert_eq!(sb["state"], 0);
    let sa = get(&app, &format!("/sessions/{a}/script")).await.json();
    assert_eq!(sa["script"], "induction l.");
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let (app, model) = app_with(&listnat_model()).await;
    let s = open(&app, &model).await;

    let r = post(
        &app,
        &format!("/sessions/{s}/step"),
        &json!({"label": "omega_0"}),
    )
    .await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let v = r.json();
    assert!(v["error"].as_str().unwrap().contains("omega_0"));
    let mut available: Vec<&str> = v["available"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_str().unwrap())
        .collect();
    available.sort();
    assert_eq!(available, ["induction", "intros"]);

    let r = post_empty(&app, &format!("/sessions/{s}/undo")).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert!(r.json()["available"].is_null());

    for uri in ["/sessions/nope/options", "/sessions/nope/script"] {
        assert_eq!(get(&app, uri).await.status, StatusCode::NOT_FOUND, "{uri}");
    }
    assert_eq!(
        post_empty(&app, "/models/nope/sessions").await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        get(&app, "/models/nope/graph").await.status,
        StatusCode::NOT_FOUND
    );

    let bad_bodies = [
        json!({"params": ["l"]}),
        json!({"label": "induction", "extra": 1}),
        json!({"label": "", "params": []}),
        json!({"label": "induction", "params": ["  "]}),
    ];
    for body in bad_bodies {
        let r = post(&app, &format!("/sessions/{s}/step"), &body).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{body}");
        assert!(r.json()["error"].is_string());
    }
    let r = call(
        &app,
        Method::POST,
        &format!("/sessions/{s}/step"),
        Some(b"{".to_vec()),
    )
    .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = call(
        &app,
        Method::POST,
        "/models",
        Some(b"{\"version\":1}".to_vec()),
    )
    .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = get(&app, &format!("/models/{model}/graph?format=svg")).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn graph_is_served_as_json_and_dot() {
    let model = listnat_model();
    let (app, id) = app_with(&model).await;
    let r = get(&app, &format!("/models/{id}/graph")).await;
    assert_eq!(r.status, StatusCode::OK);
    let v = r.json();
    assert_eq!(v["nodes"].as_array().unwrap().len(), model.state_count());
    assert_eq!(
        v["edges"].as_array().unwrap().len(),
        model.transitions().len()
    );
    assert_eq!(
        get(&app, &format!("/models/{id}/graph?format=json"))
            .await
            .json(),
        v
    );

    let r = get(&app, &format!("/models/{id}/graph?format=dot")).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.content_type, "text/vnd.graphviz");
    assert_eq!(r.text, model.export_dot());
}

#[tokio::test]
async fn idle_sessions_expire() {
    let state = ServiceState::new(Duration::from_millis(50));
    let id = state.add_model(listnat_model());
    let app = router(state.clone());
    let s = open(&app, &id).await;
    assert_eq!(
        get(&app, &format!("/sessions/{s}/options")).await.status,
        StatusCode::OK
    );
    assert_eq!(state.session_count(), 1);
    tokio::time::sleep(Duration::from_millis(120)).await;
    assert_eq!(
        get(&app, &format!("/sessions/{s}/options")).await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn activity_keeps_a_session_alive() {
    let state = ServiceState::new(Duration::from_millis(300));
    let id = state.add_model(listnat_model());
    let app = router(state);
    let s = open(&app, &id).await;
    for _ in 0..5 {
        tokio::time::sleep(Duration::from_millis(100)).await;
        assert_eq!(
            get(&app, &format!("/sessions/{s}/options")).await.status,
            StatusCode::OK
        );
    }
}

#[tokio::test]
async fn served_over_a_real_socket() {
    let state = ServiceState::new(DEFAULT_TTL);
    let id = state.add_model(listnat_model());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(async move { axum::serve(listener, router(state)).await });

    let out = tokio::task::spawn_blocking(move || {
        use std::io::{Read, Write};
        let mut stream = std::net::TcpStream::connect(addr).unwrap();
        let req = format!(
            "POST /models/{id}/sessions HTTP/1.1\r\nHost: x\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"
        );
        stream.write_all(req.as_bytes()).unwrap();
        let mut out = String::new();
        stream.read_to_string(&mut out).unwrap();
        out
    })
    .await
    .unwrap();
    assert!(out.starts_with("HTTP/1.1 201"), "{out}");
    assert!(out.contains("\"model\":\"m1\""));
    server.abort();
}
