#![allow(dead_code)]

use std::sync::Arc;

use axum::Router;
use episodic_core::Gateway;
use serde_json::Value;

/// Serves `router` on an ephemeral port from a background runtime and
/// returns the base URL.
pub fn spawn_router(router: Router) -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    format!("http://{addr}")
}

pub fn spawn_gateway(gateway: Gateway) -> String {
    spawn_router(episodic_server::api::router(Arc::new(gateway)))
}

/// Client that reports 4xx/5xx as responses rather than errors.
pub fn client() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

pub fn post(agent: &ureq::Agent, url: &str, body: Value) -> (u16, Value) {
    let mut resp = agent.post(url).send_json(body).unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap())
}

pub fn get(agent: &ureq::Agent, url: &str) -> (u16, Value) {
    let mut resp = agent.get(url).call().unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap())
}
