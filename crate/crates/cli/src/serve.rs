//! `serve`: the HTTP query service over the pipeline's index snapshots.

use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::time::Duration;

use skystream_core::api::{self, ApiState, MetricsSource, SnapshotWatcher};
use skystream_core::index::IndexStore;
use skystream_core::stream::StopSignal;

use crate::pipeline::metrics_path;
use crate::{CliError, Report, RunConfig};

pub fn bind(addr: &str) -> Result<TcpListener, CliError> {
    let l = TcpListener::bind(addr).map_err(|e| CliError::Network(format!("cannot bind {addr}: {e}")))?;
    l.set_nonblocking(true).map_err(|e| CliError::Network(e.to_string()))?;
    Ok(l)
}

/// Serves `state` until `stop` is raised or the process gets Ctrl-C. With a
/// watcher, indices are reloaded whenever their snapshot files change.
pub fn serve_state(
    state: ApiState,
    cors: bool,
    listener: TcpListener,
    watcher: Option<(SnapshotWatcher, Duration)>,
    stop: StopSignal,
) -> Result<(), CliError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failed(format!("cannot start runtime: {e}")))?;
    let result = rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener).map_err(|e| CliError::Network(e.to_string()))?;
        if let Some((watcher, every)) = watcher {
            let (watcher, stop) = (Arc::new(watcher), stop.clone());
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(every);
                while !stop.is_stopped() {
                    tick.tick().await;
                    let w = watcher.clone();
                    match tokio::task::spawn_blocking(move || w.poll()).await {
                        Ok(Ok(names)) if !names.is_empty() => log::info!("reloaded {}", names.join(",")),
                        Ok(Err(e)) => log::warn!("snapshot reload failed: {e}"),
                        _ => {}
                    }
                }
            });
        }
        let waiter = stop.clone();
        let shutdown = async move {
            let stopped = tokio::task::spawn_blocking(move || while !waiter.wait(Duration::from_millis(250)) {});
            tokio::select! {
                _ = tokio::signal::ctrl_c() => log::info!("interrupted, shutting down"),
                _ = stopped => {}
            }
            stop.stop();
        };
        api::serve(listener, api::router(state, cors), shutdown)
            .await
            .map_err(|e| CliError::Network(format!("server failed: {e}")))
    });
    rt.shutdown_timeout(Duration::from_secs(1));
    result
}

/// `serve`: loads the latest snapshots and answers queries, reading pipeline
/// counters from the metrics file and delay summaries from `_delays/`.
pub fn serve(cfg: &RunConfig, stop: StopSignal, on_ready: impl FnOnce(SocketAddr)) -> Result<Report, CliError> {
    let store = Arc::new(IndexStore::with_dir(&cfg.data_dir));
    let stream = &cfg.pipeline.stream;
    let names = vec![stream.positions_index.clone(), stream.windows_index.clone()];
    let state = ApiState::new(
        store.clone(),
        MetricsSource::File(metrics_path(&cfg.data_dir)),
        Some(cfg.data_dir.join("_delays")),
        &stream.positions_index,
    )?;
    let watcher = SnapshotWatcher::new(store, names);
    for name in watcher.poll()? {
        log::info!("loaded snapshot of {name}");
    }
    let listener = bind(&cfg.api.bind)?;
    let addr = listener.local_addr().map_err(|e| CliError::Network(e.to_string()))?;
    log::info!("listening on http://{addr}");
    on_ready(addr);
    serve_state(state, cfg.api.cors, listener, Some((watcher, Duration::from_secs(cfg.api.reload_seconds))), stop)?;
    let mut r = Report::default();
    r.push("addr", addr);
    Ok(r)
}
