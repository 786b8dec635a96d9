"""Route maps and run figures.

Maps are SVG so they can be diffed as text; the hash salt and date are fixed
so identical inputs give identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import LineCollection
from matplotlib.patches import Polygon

from .arc_metrics import sample_path
from .comm_model import se_from_sinr, serving_matrix, sinr_matrix
from .instance import Instance
from .solution import Plan

NODE_STYLE = {
    "depot": dict(marker="s", s=70, c="black", label="depot"),
    "customer": dict(marker="^", s=80, c="tab:blue", label="customer"),
    "charging_station": dict(marker="D", s=45, c="tab:green", label="charging station"),
    "waypoint": dict(marker="o", s=12, c="dimgray", label="waypoint"),
}
DRONE_COLORS = ("tab:purple", "tab:orange", "tab:cyan", "tab:olive", "tab:brown", "tab:pink")


def _clip(poly, normal, offset):
    """Keep the part of ``poly`` with ``normal . p <= offset``."""
    out = []
    n = len(poly)
    for k in range(n):
        p, q = poly[k], poly[(k + 1) % n]
        fp, fq = normal @ p - offset, normal @ q - offset
        if fp <= 0:
            out.append(p)
        if fp * fq < 0:
            out.append(p + (q - p) * (fp / (fp - fq)))
    return out


def coverage_cells(instance: Instance) -> list[np.ndarray]:
    """Polygon of the region each base station serves, clipped to the zone."""
    w, h = instance.region_m
    sites = instance.comm.positions
    box = [np.array(p, dtype=float) for p in ((0, 0), (w, 0), (w, h), (0, h))]
    cells = []
    for i, s in enumerate(sites):
        poly = box
        for j, t in enumerate(sites):
            if i == j or not poly:
                continue
            # points closer to s than to t
            normal = t - s
            if not normal.any():
                continue
            poly = _clip(poly, normal, (t @ t - s @ s) / 2.0)
        cells.append(np.array(poly) if poly else np.zeros((0, 2)))
    return cells


def outage_segments(instance: Instance, a, b, r: int | None = None) -> list[np.ndarray]:
    """Sub-segments of the flight a -> b touching a sample point in outage."""
    r = r or instance.metric_config.r_segments
    pts = sample_path(a, b, r)
    se = se_from_sinr(sinr_matrix(instance.comm, pts, serving_matrix(instance.comm, pts)))
    bad = se < instance.comm.params.se_threshold
    return [pts[k:k + 2] for k in range(r) if bad[k] or bad[k + 1]]


def check_plan_matches(instance: Instance, plan: Plan) -> None:
    if len(plan.trips_by_drone) != instance.n_drones:
        raise ValueError(f"plan has {len(plan.trips_by_drone)} drones, instance has {instance.n_drones}")
    for u, k, trip in plan.all_trips():
        if any(not 0 <= v < instance.n_flyable for v in trip.nodes):
            raise ValueError(f"drone {u} trip {k} uses a node the instance does not have")


def plot_route_map(instance: Instance, plan: Plan | None, path, title: str | None = None):
    """Coverage cells, nodes, trips and outage stretches as an SVG file."""
    if plan is not None:
        check_plan_matches(instance, plan)
    w, h = instance.region_m
    plt.rcParams["svg.hashsalt"] = "cddp"
    fig, ax = plt.subplots(figsize=(7, 7 * h / w if w else 7))
    fills = plt.get_cmap("Pastel1")
    for i, cell in enumerate(coverage_cells(instance)):
        if len(cell) >= 3:
            ax.add_patch(Polygon(cell, closed=True, facecolor=fills(i % fills.N), alpha=0.5,
                                 edgecolor="gray", linestyle="--", linewidth=0.8))
    bs = instance.comm.positions
    ax.scatter(bs[:, 0], bs[:, 1], marker="x", c="gray", s=30, label="base station", zorder=3)

    pos = instance.positions
    if plan is not None:
        for u, trips in enumerate(plan.trips_by_drone):
            color = DRONE_COLORS[u % len(DRONE_COLORS)]
            for k, trip in enumerate(trips):
                xy = pos[list(trip.nodes)]
                ax.plot(xy[:, 0], xy[:, 1], color=color, linewidth=1.5, zorder=4,
                        label=f"drone {u}" if k == 0 else None)
                red = [seg for i, j in trip.arcs() for seg in outage_segments(instance, pos[i], pos[j])]
                if red:
                    ax.add_collection(LineCollection(red, colors="red", linewidths=4.0, zorder=5))

    for kind, style in NODE_STYLE.items():
        ids = instance.ids_of(kind)
        if ids:
            ax.scatter(pos[ids, 0], pos[ids, 1], zorder=6, **style)
    for i, (x, y) in enumerate(pos):
        if instance.kind(i) != "waypoint":
            ax.annotate(str(i), (x, y), textcoords="offset points", xytext=(4, 4), fontsize=7)

    ax.set_xlim(0, w)
    ax.set_ylim(0, h)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title or instance.name)
    ax.legend(loc="upper left", bbox_to_anchor=(1.01, 1.0), fontsize=8, frameon=False)
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)


def plot_trace(trace, path, title="best penalized fitness"):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(len(trace)), trace, color="tab:blue")
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_bench_summary(rows, path):
    """Mean distance increase over the unconstrained case, per threshold case."""
    cases = []
    for row in rows:
        if row["case"] not in cases:
            cases.append(row["case"])
    means = []
    for case in cases:
        vals = [float(r["distance_increase"]) for r in rows
                if r["case"] == case and r["distance_increase"] not in ("", None)]
        means.append(100.0 * np.mean(vals) if vals else np.nan)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(range(len(cases)), means, color="tab:gray")
    ax.set_xticks(range(len(cases)), cases)
    ax.set_ylabel("distance increase (%)")
    ax.set_xlabel("threshold case")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
