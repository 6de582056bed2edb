import numpy as np
import pytest

from app.models.analytics import AnalyticSweepConfig, CostParams, LpParams
from app.models.trace import TraceStats
from app.services import analytics
from app.services.engine import to_us
from app.utils.exceptions import AnalyticsDomainError, ScenarioConfigError


def test_triangular_matches_the_loop_sum():
    total = 0
    for n in range(10_001):
        total += n
        assert analytics.triangular(n) == total
    with pytest.raises(AnalyticsDomainError):
        analytics.triangular(-1)


def test_discovery_cost_sums_the_rings():
    assert analytics.ce_ring(4.0, 3) == 28.0
    assert analytics.ce_rd(4.0, [1, 3]) == 36.0
    with pytest.raises(AnalyticsDomainError):
        analytics.ce_rd(4.0, [])


def test_hello_cost():
    assert analytics.ce_hello(900.0, 1.0, 50) == 45_000.0
    with pytest.raises(AnalyticsDomainError):
        analytics.ce_hello(900.0, 0.0, 50)


def random_params(rng):
    return CostParams(
        d_avg=float(rng.uniform(0, 10)),
        rings=[int(n) for n in rng.integers(0, 40, size=rng.integers(1, 8))],
        n_llr=int(rng.integers(0, 30)),
        n_rerr=int(rng.integers(0, 30)),
        n_ps=int(rng.integers(0, 10)),
        n_rn=int(rng.integers(0, 50)),
        tau_route_in_use=float(rng.uniform(0, 900)),
        tau_h_interval=float(rng.uniform(0.5, 2.0)),
        lb_indicator=int(rng.integers(0, 2)),
        pus_llr_indicator=int(rng.integers(0, 2)),
    )


def test_hello_variant_costs_exactly_its_beacons_more():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        p = random_params(rng)
        hello = analytics.ce_hello(p.tau_route_in_use, p.tau_h_interval, p.n_rn)
        assert analytics.ce_rm_aodv(p) == hello + analytics.ce_rm_aodv_ll(p)
        assert analytics.ce_rm_dymo(p) == hello + p.lb_indicator * analytics.triangular(p.n_rerr)


def test_maintenance_cost_per_protocol():
    p = CostParams(n_llr=4, n_rerr=3, n_ps=2, n_rn=5, tau_route_in_use=10.0, lb_indicator=1, pus_llr_indicator=1)
    assert analytics.ce_rm_for("aodv-ll", p) == 10 + 6
    assert analytics.ce_rm_for("aodv", p) == 50 + 16
    assert analytics.ce_rm_for("dsr", p) == 3.0
    assert analytics.ce_rm_for("dsr-m", p) == 3.0
    assert analytics.ce_rm_for("dymo", p) == 50 + 6


def test_waiting_time_follows_the_ring_schedule():
    assert analytics.waiting_time(0) == 0.0
    assert analytics.waiting_time(3) == pytest.approx(0.9)
    assert analytics.waiting_time(7) == pytest.approx(0.1 + 0.3 + 0.5 + 0.7 + 3 * 3.5)
    with pytest.raises(AnalyticsDomainError):
        analytics.waiting_time(8)


def test_intermediate_replies_shorten_searches_except_for_dymo():
    assert analytics.effective_rings("aodv", 4, 0.5) == 2
    assert analytics.effective_rings("dsr", 1, 0.9) == 1
    assert analytics.effective_rings("dymo", 4, 0.5) == 4
    assert analytics.effective_rings("aodv", 4, 0.0) == 4


def test_throughput_objective_forms():
    trace = TraceStats(duration_s=900.0, payload_bits=4096, data_delivered=1000, delivered_bits=1000 * 4096)
    assert analytics.throughput_objective(trace, 900.0) == pytest.approx(4551.11, abs=0.01)
    trace.discoveries_started, trace.no_route_events = 10, 2
    assert analytics.throughput_objective(trace, 900.0) == pytest.approx(0.8 * 4551.11, abs=0.01)
    assert analytics.throughput_objective(trace, 900.0, literal=False) == pytest.approx(4551.11, abs=0.01)
    with pytest.raises(AnalyticsDomainError):
        analytics.throughput_objective(trace, 0.0)


def test_sliding_window_peak():
    log = {0: [(0, 1000), (500_000, 1000), (1_200_000, 1000)], 1: []}
    assert analytics.sliding_window_peaks(log) == {0: 2000}


def test_constraint_report_counts_violations():
    trace = TraceStats(duration_s=60.0, discovery_durations=[0.4, 31.0], discoveries_started=2, discoveries_succeeded=2)
    trace.per_node_per_second_bits[(0, 0)] = 3_000_000
    trace.per_node_per_second_bits[(0, 1)] = 1_000
    report = analytics.check_constraints(trace, LpParams())

    assert report.violation_count("1.a") == 1
    assert report.violation_count("2.a") == 1
    assert report.violation_count("3.a") == 0
    assert report.ct_rd == pytest.approx(15.7)
    assert report.p_s_rd == 1.0
    assert LpParams().effective_beta_cri == 1_000_000.0
    assert [v.constraint for v in report.violations] == ["1.a", "1.b", "1.c", "1.d", "1.e", "2.a", "2.b", "3.a", "3.b"]


def test_parameters_from_yaml(tmp_path):
    path = tmp_path / "costs.yaml"
    path.write_text("d_avg: 4\nrings: [3, 5]\nmax_rings: 3\nd_avg_values: [2, 4]\n")
    params, sweep = analytics.load_analytic_params(path)
    assert params.rings == [3, 5]
    assert params.m == 2
    assert sweep.max_rings == 3


def test_parameters_from_key_values(tmp_path):
    path = tmp_path / "costs.conf"
    path.write_text("# measured\nd_avg = 4.5\nrings = [3, 5]\nn_rn = 5\n")
    params, sweep = analytics.load_analytic_params(path)
    assert params.d_avg == 4.5
    assert params.n_rn == 5
    assert sweep == AnalyticSweepConfig()


def test_unknown_parameter_is_a_config_error(tmp_path):
    path = tmp_path / "costs.conf"
    path.write_text("d_avg = 4\nbogus = 1\n")
    with pytest.raises(ScenarioConfigError) as excinfo:
        analytics.load_analytic_params(path)
    assert excinfo.value.field == "bogus"


def test_malformed_line_reports_its_number(tmp_path):
    path = tmp_path / "costs.conf"
    path.write_text("d_avg = 4\nrings\n")
    with pytest.raises(ScenarioConfigError) as excinfo:
        analytics.load_analytic_params(path)
    assert excinfo.value.line == 2


def test_sweep_rows_and_monotone_discovery_cost():
    config = AnalyticSweepConfig(max_rings=3, d_avg_values=[2.0, 4.0])
    rows = analytics.analytic_sweep(CostParams(rings=[3, 5]), config)
    assert len(rows) == 5 * 2 * 3
    assert set(rows[0]) == set(analytics.SWEEP_FIELDS)
    for protocol in ("aodv", "dymo"):
        costs = [r["ce_rd"] for r in rows if r["protocol"] == protocol and r["d_avg"] == 4.0]
        assert costs == sorted(costs)
        assert len(set(costs)) == 3


def test_sweep_rejects_more_rings_than_the_schedule():
    with pytest.raises(AnalyticsDomainError):
        analytics.analytic_sweep(CostParams(rings=[3]), AnalyticSweepConfig(max_rings=9))


def test_hello_formula_matches_a_static_run(static_network, line_positions):
    network = static_network(line_positions(4), "aodv", horizon_s=30.0)
    network.add_cbr_flow(0, 0, 3, 2.0, stop_us=to_us(10))
    network.sim.run()

    comparison = analytics.compare_with_trace(network.stats, "aodv")
    assert comparison.hello_exact
    assert comparison.params.n_rn == 4
    assert comparison.sim_hello_emitted >= comparison.sim_hello_transmitted > 0
    assert comparison.sim_discovery_packets == 7
