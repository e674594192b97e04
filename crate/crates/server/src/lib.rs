//! HTTP and command-line front end for `episodic-core`.

pub mod api;
pub mod clients;
pub mod config;

use std::sync::Arc;

use episodic_core::Gateway;
use tokio::net::TcpListener;

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    gateway: Arc<Gateway>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, api::router(gateway))
        .with_graceful_shutdown(shutdown)
        .await
}
