from fastapi import FastAPI, HTTPException, Depends
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi import Request
from contextlib import asynccontextmanager
import time
import logging
from datetime import datetime

from app.config import configure_logging, settings
from app.models.analytics import CostParams
from app.models.results import AnalyticResponse, HealthResponse, SimulationResponse
from app.models.scenario import ProtocolName, Scenario
from app.services import harness
from app.services.analytics import ce_rd, ce_rm_for, ce_total, waiting_time
from app.services.error_handler import RunErrorHandler
from app.services.routing_common import RoutingParams
from app.utils.exceptions import AnalyticsDomainError, ScenarioConfigError, SimulationError

configure_logging()
logger = logging.getLogger(__name__)

# Global variables for services
error_handler = None
routing_params = None


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Startup and shutdown events"""
    global error_handler, routing_params

    logger.info("Starting MANET simulator API...")
    error_handler = RunErrorHandler()
    routing_params = RoutingParams()
    logger.info(
        f"✅ Ready: {len(harness.PROTOCOLS)} protocols, presets {harness.available_presets()}, "
        f"API runs capped at {settings.max_api_duration_s:g}s simulated"
    )

    yield

    logger.info("MANET simulator API shutting down...")


app = FastAPI(
    title="MANET Routing Simulator API",
    description="Deterministic simulation of reactive ad-hoc routing protocols with cost-model analytics",
    version="1.0.0",
    lifespan=lifespan,
    docs_url="/docs",
    redoc_url="/redoc",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


def get_error_handler() -> RunErrorHandler:
    if error_handler is None:
        raise HTTPException(status_code=500, detail="Error handler not initialized")
    return error_handler


def get_routing_params() -> RoutingParams:
    if routing_params is None:
        raise HTTPException(status_code=500, detail="Routing parameters not initialized")
    return routing_params


@app.exception_handler(ScenarioConfigError)
async def config_exception_handler(request: Request, exc: ScenarioConfigError):
    logger.error(f"❌ Configuration error: {exc}")
    return JSONResponse(status_code=400, content={"detail": str(exc), "field": exc.field})


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    logger.exception(f"Unhandled exception: {exc}")
    return JSONResponse(
        status_code=500,
        content={"detail": str(exc)},
    )


@app.get("/", response_model=dict)
async def root():
    return {
        "message": "📡 MANET Routing Simulator API",
        "description": "Discrete-event simulation of AODV, AODV-LL, DSR, DSR-M and DYMO",
        "version": "1.0.0",
        "protocols": [p.value for p in ProtocolName],
        "presets": harness.available_presets(),
        "endpoints": {
            "health": "/health - Service status",
            "protocols": "/protocols - Protocol variants and their parameters",
            "simulate": "/simulate - Run one scenario (POST)",
            "analytic": "/analytic - Evaluate the cost formulas (POST)",
            "stats": "/stats - Run and error statistics",
            "docs": "/docs - Interactive API documentation",
        },
    }


@app.get("/health", response_model=HealthResponse)
async def health_check():
    services_status = {
        "engine": {
            "connected": routing_params is not None,
            "message": f"{len(harness.PROTOCOLS)} protocols registered",
            "status": "Success" if routing_params else "Failure",
        },
        "analytics": {
            "connected": True,
            "message": "Cost formulas ready",
            "status": "Success",
        },
        "error_handler": {
            "connected": error_handler is not None,
            "message": "Error handler ready",
            "status": "Success" if error_handler else "Failure",
        },
    }
    healthy = all(s["connected"] for s in services_status.values())
    return HealthResponse(
        status="ok" if healthy else "degraded",
        message="Simulator operational" if healthy else "Some components are not initialized",
        timestamp=datetime.now().isoformat(),
        services=services_status,
    )


@app.get("/protocols")
async def list_protocols(params: RoutingParams = Depends(get_routing_params)):
    """🧭 Protocol variants and what distinguishes them"""
    ers = params.ers
    return {
        "expanding_ring_search": {
            "ttl_start": ers.ttl_start,
            "ttl_increment": ers.ttl_increment,
            "ttl_threshold": ers.ttl_threshold,
            "net_diameter": ers.net_diameter,
            "ring_ttls": ers.ring_ttls(),
        },
        "protocols": {
            ProtocolName.AODV.value: {
                "route_store": "routing table",
                "route_lifetime_s": params.aodv_route_lifetime_s,
                "link_detection": f"HELLO every {params.hello_interval_s:g}s, {params.allowed_hello_loss} losses",
                "gratuitous_replies": True,
                "local_repair": True,
            },
            ProtocolName.AODV_LL.value: {
                "route_store": "routing table",
                "route_lifetime_s": params.aodv_route_lifetime_s,
                "link_detection": "link-layer feedback",
                "gratuitous_replies": True,
                "local_repair": True,
            },
            ProtocolName.DSR.value: {
                "route_store": "route cache",
                "cache_capacity": params.dsr_cache_capacity,
                "link_detection": "link-layer feedback",
                "salvage_limit": params.salvage_limit,
                "piggybacked_errors": True,
            },
            ProtocolName.DSR_M.value: {
                "route_store": "route cache",
                "cache_capacity": params.dsrm_cache_capacity,
                "link_detection": "link-layer feedback",
                "salvage_limit": params.salvage_limit,
                "piggybacked_errors": True,
            },
            ProtocolName.DYMO.value: {
                "route_store": "routing table",
                "route_lifetime_s": params.dymo_route_lifetime_s,
                "link_detection": f"HELLO every {params.hello_interval_s:g}s, {params.allowed_hello_loss} losses",
                "gratuitous_replies": False,
                "rerr_flood_ttl": params.dymo_rerr_ttl,
            },
        },
    }


@app.post("/simulate", response_model=SimulationResponse)
def simulate(
    scenario: Scenario,
    error_handler: RunErrorHandler = Depends(get_error_handler),
    params: RoutingParams = Depends(get_routing_params),
):
    """
    ▶️ Run one scenario to completion

    What this does: simulates the scenario and returns its metric row and constraint report
    Why: quick single-cell runs without going through the batch CLI
    Returns: SimulationResponse; a failed run is reported with success=False
    """
    if scenario.duration_s > settings.max_api_duration_s:
        raise ScenarioConfigError(
            f"duration {scenario.duration_s:g}s exceeds the API limit of {settings.max_api_duration_s:g}s",
            field="duration_s",
        )

    start_time = time.time()
    logger.info(f"Starting run {scenario.scenario_id}")
    try:
        result = harness.run(scenario, params=params)
    except SimulationError as e:
        error_handler.log_pipeline_stage("run", False)
        error_handler.log_run_failure(scenario.scenario_id, e)
        return SimulationResponse(
            success=False,
            message=f"Run failed: {e}",
            run_time_seconds=round(time.time() - start_time, 2),
        )

    error_handler.log_pipeline_stage("run", True)
    return SimulationResponse(
        success=True,
        message=f"{scenario.scenario_id}: {result.row.data_recv}/{result.row.data_sent} packets delivered",
        row=result.row,
        report=result.report,
        run_time_seconds=round(time.time() - start_time, 2),
    )


@app.post("/analytic", response_model=AnalyticResponse)
async def analytic(
    cost: CostParams,
    error_handler: RunErrorHandler = Depends(get_error_handler),
    params: RoutingParams = Depends(get_routing_params),
):
    """🧮 Evaluate discovery and maintenance cost for every protocol"""
    try:
        wait = waiting_time(cost.m, params.ers)
        rd = ce_rd(cost.d_avg, cost.rings)
        rm = {p.value: ce_rm_for(p, cost) for p in ProtocolName}
    except AnalyticsDomainError as e:
        error_handler.log_error("analytic", e, {"rings": cost.rings})
        raise ScenarioConfigError(str(e), field="rings") from e

    error_handler.log_pipeline_stage("analytic", True)
    return AnalyticResponse(
        params=cost,
        ce_rd=rd,
        ce_rm=rm,
        ce_total={name: ce_total(rd, value) for name, value in rm.items()},
        waiting_time_s=wait,
    )


@app.get("/stats")
async def get_run_stats(
    error_handler: RunErrorHandler = Depends(get_error_handler),
):
    """📊 Run statistics and recorded failures"""
    return {
        "timestamp": datetime.now().isoformat(),
        "version": "1.0.0",
        "error_statistics": error_handler.get_error_summary(),
    }


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=settings.port, log_level="info")
