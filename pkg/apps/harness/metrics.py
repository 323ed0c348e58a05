from __future__ import annotations

import structlog
from prometheus_client import Counter, Gauge, Histogram, start_http_server

# Prometheus metrics for training runs
iterations_total = Counter(
    "ipvi_iterations_total",
    "Total number of outer training iterations",
    ["method"],
)

payoff = Gauge(
    "ipvi_payoff",
    "Most recent payoff value per player",
    ["player"],
)

iteration_seconds = Histogram(
    "ipvi_iteration_seconds",
    "Wall-clock duration of one outer iteration in seconds",
    ["method"],
)

runs_total = Counter(
    "ipvi_runs_total",
    "Total number of experiment runs",
    ["method", "status"],
)

checkpoints_total = Counter(
    "ipvi_checkpoints_total",
    "Total number of checkpoint operations",
    ["op"],
)

logger = structlog.get_logger(__name__)


def start_metrics_server(port: int) -> None:
    """Start Prometheus metrics HTTP server."""
    try:
        start_http_server(port)
        logger.info("metrics_server_started", port=port)
    except OSError as e:
        logger.error("metrics_server_failed", port=port, error=str(e))


def record_iteration(method: str, record: dict) -> None:
    """Record one training-log record."""
    iterations_total.labels(method=method).inc()
    iteration_seconds.labels(method=method).observe(record["seconds"])
    if record.get("player1") is not None:
        payoff.labels(player="player1").set(record["player1"])
    payoff.labels(player="player2").set(record["player2"])


def record_run(method: str, success: bool = True) -> None:
    status = "success" if success else "failure"
    runs_total.labels(method=method, status=status).inc()


def record_checkpoint(op: str) -> None:
    checkpoints_total.labels(op=op).inc()
