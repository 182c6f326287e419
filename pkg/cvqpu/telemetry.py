# cvqpu/telemetry.py
import logging

from prometheus_client import Counter, Histogram, start_http_server

logger = logging.getLogger("cvqpu.telemetry")

# Label by op kind so sweeps of different gates can be compared
SWEEP_POINTS = Counter(
    "cvqpu_sweep_points_total",
    "Grid points evaluated by sweeps",
    ["op"],
)

FLAGGED_ROWS = Counter(
    "cvqpu_flagged_rows_total",
    "Result rows flagged for norm drift, leakage or regime failure",
    ["reason"],
)

EVOLUTION_SECONDS = Histogram(
    "cvqpu_evolution_seconds",
    "Wall time of one propagation",
    ["path"],
    buckets=(0.001, 0.01, 0.1, 1.0, 10.0, 60.0, 600.0),
)

INTEGRATOR_STEPS = Counter(
    "cvqpu_integrator_steps_total",
    "Steps taken by the adaptive integrator",
    ["outcome"],
)


def setup_telemetry(port: int) -> bool:
    """
    Starts the exporter at http://localhost:<port>/. A busy port is logged and
    ignored. Returns True when the exporter is running.
    """
    try:
        start_http_server(port)
    except OSError as e:
        logger.warning("[telemetry] Not started (port %s in use): %s", port, e)
        return False
    logger.info("[telemetry] Prometheus exporter running on :%s", port)
    return True
