"""Built-in acceptance suite.

Each check returns (passed, detail). The same registry backs both the
`racenav acceptance` command and tests/test_acceptance.py. Scenario
checks use the canned scenarios from racenav.sim; oracle checks compare
the production path against an independent implementation (brute-force
connected components, exhaustive path enumeration, direct coefficient
recovery).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import squareform, pdist

from racenav import core, fusion, kernels, perception, planner, sim
from racenav.core import ControlInput, Pose2D, VehicleState
from racenav.fusion import (
    FilterState,
    GateKind,
    GateParams,
    Measurement,
    StatusThresholds,
)


def _lateral_offsets(result: sim.SimResult):
    sc = result.scenario
    track = sim.build_oval_track(
        sc.track.straight_len,
        sc.track.turn_radius,
        sc.track.half_width,
        math.radians(sc.track.bank_deg),
    )
    locator = sim.CenterlineLocator(track.centerline)
    return np.array(
        [locator.locate(r.true_pose.x, r.true_pose.y)[1] for r in result.records]
    )


def check_gating_truth_table():
    """Criterion 1: the four gate cases on a fixed table, epsilon=0.2,
    delta=5.0, boundaries belonging to the <= branch."""
    p = GateParams(0.2, 5.0)
    aq, wf, sf, rj = (
        GateKind.ALL_QUALIFIED,
        GateKind.WEIGHTED_FUSE,
        GateKind.SINGLE_FEASIBLE,
        GateKind.REJECT,
    )
    table = [
        ([0.1, 0.15], aq),
        ([0.0, 0.0], aq),
        ([0.2, 0.2], aq),  # boundary: delta = epsilon inclusive
        ([0.2, 0.1], aq),
        ([0.05], aq),
        ([0.2, 0.2, 0.2], aq),
        ([0.21, 0.1], wf),  # one above epsilon -> fuse
        ([1.0, 1.0], wf),
        ([5.0, 5.0], wf),  # boundary: delta inclusive
        ([0.1, 5.0], wf),
        ([4.9, 0.3], wf),
        ([2.0, 3.0, 4.0], wf),
        ([0.5, 6.0], sf),
        ([6.0, 0.5], sf),
        ([5.0, 5.01], sf),  # boundary vs just-above
        ([10.0, 4.0, 20.0], sf),
        ([0.1, 5.1], sf),  # within epsilon but partner fails delta
        ([7.0, 9.0], rj),
        ([5.01, 5.01], rj),
        ([100.0], rj),
        ([math.inf, math.inf], rj),
        ([5.1, 5.1, 5.1], rj),
    ]
    for dists, expected in table:
        got = fusion.gate(dists, p)
        if got.kind is not expected:
            return False, f"gate({dists}) -> {got.kind.value}, want {expected.value}"
    return True, f"{len(table)} distance vectors matched"


def _episode_window(sc):
    eps = sc.faults.episodes_by_source[0]
    return eps[0].t_start, eps[0].t_end


def check_dual_outage():
    """Criterion 2: 7 s dual-GPS bias fault handled by wall following."""
    sc = sim.dual_outage_scenario()
    t0, t1 = _episode_window(sc)
    res = sim.run_scenario(sc)
    if res.off_track:
        return False, "vehicle left the corridor"
    recs = res.records

    t_emergency = next(
        (r.t for r in recs if r.status == "emergency"), None
    )
    if t_emergency is None or t_emergency > t0 + 0.5:
        return False, f"emergency at {t_emergency}, want <= {t0 + 0.5}"

    during = [r for r in recs if t0 <= r.t < t1 and r.gate]
    bad = [r.t for r in during if r.gate != "reject"]
    if bad:
        return False, f"measurement updates during episode at t={bad[:3]}"

    lat = _lateral_offsets(res)
    limit = sc.track.half_width - 1.0
    if np.abs(lat).max() >= limit:
        return False, f"max |lateral| {np.abs(lat).max():.2f} >= {limit}"

    t_recover = next(
        (r.t for r in recs if r.t >= t1 and r.status == "nominal"), None
    )
    if t_recover is None or t_recover > t1 + 1.0:
        return False, f"nominal restored at {t_recover}, want <= {t1 + 1.0}"

    modes = {r.mode for r in recs if r.status == "emergency"}
    if modes != {"wall_follow"}:
        return False, f"emergency modes {modes}"
    after = [r.mode for r in recs if r.t >= t_recover]
    if not after or set(after) != {"racing_line"}:
        return False, "steering did not revert to localization-based command"
    return True, (
        f"emergency at {t_emergency:.2f}s, nominal back at {t_recover:.2f}s, "
        f"max |lateral| {np.abs(lat).max():.2f} m"
    )


def check_negative_control():
    """Criterion 3: the same fault with gating disabled leaves the track."""
    res = sim.run_scenario(sim.dual_outage_scenario(gating_enabled=False))
    if not res.off_track:
        return False, "ungated run stayed on track"
    return True, f"OffTrack raised at t={res.records[-1].t:.2f}s"


def check_wall_regulation():
    """Criterion 4: 1 m initial gap error regulated within 5 s."""
    sc = sim.wall_regulation_scenario(gap_error=1.0)
    res = sim.run_scenario(sc)
    if res.off_track:
        return False, "vehicle left the corridor"
    gap = sc.wallfollow.d_gap
    t_emergency = next(r.t for r in res.records if r.status == "emergency")
    errs = [
        (r.t, abs(abs(r.d_w) - gap))
        for r in res.records
        if r.d_w is not None and r.t >= t_emergency
    ]
    settle = t_emergency + 5.0
    late = [e for t, e in errs if t >= settle]
    if not late or max(late) >= 0.2:
        return False, f"error after {settle:.1f}s up to {max(late):.3f} m"
    overshoot = max(e for _, e in errs)
    if overshoot >= 1.5:
        return False, f"overshoot {overshoot:.3f} m >= 1.5x initial error"
    return True, f"settled, overshoot {overshoot:.2f} m"


def check_perception_partition():
    """Criterion 5: labeled banked scene; partition quality and wall fit."""
    cloud, labels = sim.make_banked_scene()
    grid = perception.grid_vote(cloud, 0.4)
    mask = perception.vertical_mask(cloud, grid, min_count=5)
    wall_kept = mask[labels == 1].mean()
    ground_removed = (~mask[labels == 0]).mean()
    if ground_removed < 0.99:
        return False, f"only {ground_removed:.3f} of ground removed"
    if wall_kept < 0.95:
        return False, f"only {wall_kept:.3f} of wall retained"
    vertical = perception.PointCloud(cloud.points[mask])
    clusters = perception.cluster(vertical, tol=1.5, min_size=10)
    wall = perception.select_wall(clusters, "right")
    model = perception.fit_wall(wall, vertical, order=2)
    if abs(model.d_w - (-7.5)) > 0.1:
        return False, f"d_w {model.d_w:.3f}, truth -7.5"
    return True, (
        f"ground removed {ground_removed:.3f}, wall kept {wall_kept:.3f}, "
        f"d_w {model.d_w:.3f}"
    )


def brute_force_labels(points, tol):
    """Independent single-linkage oracle: full pairwise distance matrix
    into scipy connected components."""
    n = points.shape[0]
    adj = squareform(pdist(points)) <= tol
    _, comp = connected_components(csr_matrix(adj), directed=False)
    remap = {}
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = remap.setdefault(comp[i], len(remap))
    return out


def check_clustering_oracle(n_clouds=100, n_points=200):
    """Criterion 6: kernel partition == brute-force partition."""
    rng = np.random.default_rng(42)
    for trial in range(n_clouds):
        pts = rng.uniform(-10.0, 10.0, size=(n_points, 3))
        tol = rng.uniform(0.5, 3.0)
        got = kernels.connected_labels(pts, tol)
        want = brute_force_labels(pts, tol)
        if not np.array_equal(got, want):
            return False, f"partition mismatch on trial {trial} (tol={tol:.3f})"
    return True, f"{n_clouds} clouds matched ({kernels.BACKEND} backend)"


def enumerate_plan(g, start, obstacles, w, horizon, safety):
    """Exhaustive-path oracle with the same cost primitives and the same
    left-to-right accumulation order as the DP."""
    start_layer, start_idx = start
    steps = min(horizon, g.n_layers - start_layer)
    layers = [start_layer + j for j in range(steps)]
    best = None
    stack = [(0, start_idx, None, None, None)]
    c0 = planner.node_cost(g, layers[0], start_idx, obstacles, w, safety)
    if math.isinf(c0):
        raise planner.NoFeasiblePath("start blocked")

    def recurse(depth, idx, cost, sumoff, seq):
        nonlocal best
        if depth == len(layers) - 1:
            cand = (cost, sumoff, seq)
            if best is None or cand < best:
                best = cand
            return
        layer, nxt_layer = layers[depth], layers[depth + 1]
        xa, ya = g.node_xy(layer, idx)
        for ib in range(g.n_offsets):
            if abs(ib - idx) > g.max_jump:
                continue
            cb = planner.node_cost(g, nxt_layer, ib, obstacles, w, safety)
            if math.isinf(cb):
                continue
            if not planner.edge_clear(g, layer, idx, nxt_layer, ib, obstacles, safety):
                continue
            xb, yb = g.node_xy(nxt_layer, ib)
            recurse(
                depth + 1,
                ib,
                cost + math.hypot(xb - xa, yb - ya) + cb,
                sumoff + g.offset_distance(ib),
                seq + (ib,),
            )

    recurse(0, start_idx, c0, g.offset_distance(start_idx), (start_idx,))
    if best is None:
        raise planner.NoFeasiblePath("all paths blocked")
    return best


def check_planner_oracle(n_trials=50):
    """Criterion 7: DP plan identical to exhaustive enumeration on small
    graphs with random obstacles."""
    rng = np.random.default_rng(2024)
    safety = planner.SafetyParams()
    w = planner.CostWeights()
    for trial in range(n_trials):
        n_layers = int(rng.integers(3, 6))
        n_offsets = int(rng.integers(2, 6))
        step = float(rng.uniform(8.0, 12.0))
        span = 1.5 * (n_offsets - 1) / 2.0
        offs = np.linspace(-span, span, n_offsets)
        line = planner.RacingLine(
            x=np.arange(0.0, n_layers * step + 1.0, step),
            y=np.zeros(n_layers + 1),
            s=np.arange(0.0, n_layers * step + 1.0, step),
            heading=np.zeros(n_layers + 1),
            kappa=np.zeros(n_layers + 1),
        )
        g = planner.build_road_graph(line, 7.5, offs, step)
        obstacles = [
            planner.Obstacle(
                center=(
                    rng.uniform(0.0, n_layers * step),
                    rng.uniform(-span - 1.0, span + 1.0),
                ),
                radius=float(rng.uniform(0.2, 0.6)),
            )
            for _ in range(int(rng.integers(0, 3)))
        ]
        start = (0, int(rng.integers(0, n_offsets)))
        try:
            got = planner.plan(g, start, obstacles, w, horizon=g.n_layers, safety=safety)
        except planner.NoFeasiblePath:
            try:
                enumerate_plan(g, start, obstacles, w, g.n_layers, safety)
            except planner.NoFeasiblePath:
                continue
            return False, f"trial {trial}: DP infeasible but oracle found a path"
        cost, _, seq = enumerate_plan(g, start, obstacles, w, g.n_layers, safety)
        if seq != got.offset_indices or cost != got.total_cost:
            return False, (
                f"trial {trial}: DP {got.offset_indices}/{got.total_cost} "
                f"vs oracle {seq}/{cost}"
            )
    return True, f"{n_trials} random placements matched exactly"


def check_pylon_avoidance():
    """Criterion 8: two pylon pairs at 31 m/s, clean avoidance and return."""
    sc = sim.pylon_scenario()
    res = sim.run_scenario(sc)
    if res.off_track:
        return False, "vehicle left the corridor"
    clear = min(
        min(
            math.hypot(r.true_pose.x - o.center[0], r.true_pose.y - o.center[1])
            - o.radius
            for o in sc.obstacles
        )
        for r in res.records
    )
    if clear < 0.5:
        return False, f"min obstacle clearance {clear:.2f} m < 0.5"
    max_dev = max(abs(r.true_pose.y) for r in res.records)
    if max_dev < 1.0:
        return False, f"no avoidance maneuver (max |y| {max_dev:.2f} m)"
    second_pair_x = 300.0
    after = [
        r.path_offset
        for r in res.records
        if r.true_pose.x >= second_pair_x + 3 * sc.planner.station_step
        and r.path_offset is not None
    ]
    if not after or any(abs(o) > 1e-9 for o in after):
        return False, "path did not return to offset 0 within 3 layers"
    return True, f"min clearance {clear:.2f} m, returned to racing line"


def check_kalman_sanity():
    """Criterion 9: noiseless equality plus NEES consistency band."""
    dt = 0.01
    model = core.FilterModel(
        q_rate=np.zeros((5, 5)),
        r_by_source=(np.eye(2) * 1e-20,),
    )
    truth = VehicleState(Pose2D(0.0, 0.0, 0.0), 20.0, 0.0, 0.0)
    fs = FilterState(estimate=truth, cov=np.eye(5) * 1e-6, model=model)
    u = ControlInput(0.0, 0.1)
    for i in range(1000):
        truth = sim.step_vehicle(truth, u, dt, model.wheelbase)
        fs = fusion.predict(fs, u, dt)
        m = Measurement(0, np.array([truth.pose.x, truth.pose.y]), np.eye(2) * 1e-20, truth.timestamp)
        d = fusion.gate([fusion.mahalanobis(fs, m)], fs.gate)
        fs = fusion.update(fs, [m], d)
        err = np.abs(fs.estimate.to_vector() - truth.to_vector())
        if err.max() > 1e-9:
            return False, f"noiseless divergence {err.max():.2e} at tick {i}"

    nees_means = []
    q = np.diag([0.05, 0.05, 1e-6, 0.01, 1e-6])
    r = np.eye(2) * 0.25
    model = core.FilterModel(q_rate=q, r_by_source=(r,))
    for seed in range(20):
        rng = np.random.default_rng(seed)
        truth_vec = np.array([0.0, 0.0, 0.0, 20.0, 0.0])
        fs = FilterState(
            estimate=VehicleState.from_vector(truth_vec, 0.0),
            cov=np.eye(5) * 1e-4,
            model=model,
        )
        lq = np.linalg.cholesky(q * dt + np.eye(5) * 1e-15)
        nees = []
        for i in range(1000):
            truth_vec = core.bicycle_step(truth_vec, ControlInput(0.0, 0.0), dt, model.wheelbase)
            truth_vec = truth_vec + lq @ rng.standard_normal(5)
            fs = fusion.predict(fs, ControlInput(0.0, 0.0), dt)
            z = truth_vec[:2] + 0.5 * rng.standard_normal(2)
            m = Measurement(0, z, r, (i + 1) * dt)
            d = fusion.gate([fusion.mahalanobis(fs, m)], fs.gate)
            fs = fusion.update(fs, [m], d)
            e = fs.estimate.to_vector()[:2] - truth_vec[:2]
            nees.append(float(e @ core.solve_spd(fs.cov[:2, :2], e)))
        nees_means.append(np.mean(nees))
    mean_nees = float(np.mean(nees_means))
    if not (1.0 <= mean_nees <= 3.5):
        return False, f"mean position NEES {mean_nees:.2f} outside [1.0, 3.5]"
    return True, f"noiseless exact; mean NEES {mean_nees:.2f}"


def check_polynomial_regression():
    """Criterion 10: exact recovery of degree-<=2 polynomials."""
    rng = np.random.default_rng(1)
    for trial in range(20):
        coeffs = rng.uniform(-5.0, 5.0, size=3)
        x = rng.uniform(-10.0, 10.0, size=25)
        y = coeffs[0] + coeffs[1] * x + coeffs[2] * x**2
        pts = np.column_stack([x, y, np.zeros_like(x)])
        cloud = perception.PointCloud(pts)
        cl = perception.Cluster(
            point_indices=np.arange(x.size), centroid=pts.mean(axis=0), length=0.0
        )
        model = perception.fit_wall(cl, cloud, order=2)
        if np.abs(model.coeffs - coeffs).max() > 1e-9:
            return False, f"trial {trial}: coeff error {np.abs(model.coeffs - coeffs).max():.2e}"
    return True, "20 random quadratics recovered to 1e-9"


def check_determinism():
    """Criterion 11: scenario 2 twice with the same seed, byte-identical
    CSV traces."""
    a = sim.trace_to_csv(sim.run_scenario(sim.dual_outage_scenario()).records)
    b = sim.trace_to_csv(sim.run_scenario(sim.dual_outage_scenario()).records)
    if a != b:
        return False, "traces differ between identical runs"
    return True, f"{len(a)} bytes identical"


CHECKS = [
    ("1-gating-truth-table", check_gating_truth_table),
    ("2-dual-gps-outage", check_dual_outage),
    ("3-negative-control", check_negative_control),
    ("4-wall-follow-regulation", check_wall_regulation),
    ("5-perception-partition", check_perception_partition),
    ("6-clustering-oracle", check_clustering_oracle),
    ("7-planner-oracle", check_planner_oracle),
    ("8-pylon-avoidance", check_pylon_avoidance),
    ("9-kalman-sanity", check_kalman_sanity),
    ("10-polynomial-regression", check_polynomial_regression),
    ("11-determinism", check_determinism),
]


def run_all(report=print):
    """Run every criterion; returns True iff all pass."""
    all_ok = True
    for name, fn in CHECKS:
        ok, detail = fn()
        all_ok &= ok
        report(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
