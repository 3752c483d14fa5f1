"""Reading and writing the CityFlow roadnet / flow JSON formats.

Only the subset needed by the simulator is interpreted: node points and the
``virtual`` flag, road points / lanes / maxSpeed, and roadLinks with their
laneLinks.  Lane geometry inside intersections and the file's own light
phases are ignored; phases are rebuilt on the fixed 4-phase scheme.
"""
from __future__ import annotations

import json
import logging
import math
from typing import Union

from .network import (
    SIDES, FlowSpec, FlowVehicle, Lane, NetworkError, Road, TrafficNetwork,
    UnsupportedTopologyError, assemble_intersection, side_of_heading,
)

log = logging.getLogger(__name__)

_TURN_OF_TYPE = {"turn_left": "left", "go_straight": "straight", "turn_right": "right"}
_TYPE_OF_TURN = {v: k for k, v in _TURN_OF_TYPE.items()}


class CityFlowParseError(NetworkError):
    """Malformed CityFlow document; ``path`` locates the offending element."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


def _parse(data: Union[bytes, str], what: str):
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise CityFlowParseError(f"{what}:{exc.lineno}:{exc.colno}", exc.msg) from None


def _get(obj, key, path):
    if not isinstance(obj, dict) or key not in obj:
        raise CityFlowParseError(path, f"missing field '{key}'")
    return obj[key]


def _heading(points, at_end: bool, path: str):
    if len(points) < 2:
        raise CityFlowParseError(path, "road needs at least two points")
    a, b = (points[-2], points[-1]) if at_end else (points[0], points[1])
    return (float(_get(b, "x", path)) - float(_get(a, "x", path)),
            float(_get(b, "y", path)) - float(_get(a, "y", path)))


def parse_roadnet(doc: dict) -> TrafficNetwork:
    nodes = _get(doc, "intersections", "roadnet")
    raw_roads = _get(doc, "roads", "roadnet")
    virtual = {}
    xy = {}
    for k, node in enumerate(nodes):
        path = f"roadnet.intersections[{k}]"
        nid = _get(node, "id", path)
        virtual[nid] = bool(node.get("virtual", False))
        point = node.get("point")
        if point is not None:
            xy[nid] = (float(point["x"]), float(point["y"]))

    # lane turn permissions come from the laneLinks of each roadLink
    perms = {}
    links = {}
    for k, node in enumerate(nodes):
        if virtual[node["id"]]:
            continue
        for j, link in enumerate(node.get("roadLinks", [])):
            path = f"roadnet.intersections[{k}].roadLinks[{j}]"
            kind = _get(link, "type", path)
            if kind not in _TURN_OF_TYPE:
                raise UnsupportedTopologyError(f"{path}: unsupported link type {kind!r}")
            turn = _TURN_OF_TYPE[kind]
            start, end = _get(link, "startRoad", path), _get(link, "endRoad", path)
            links.setdefault(node["id"], []).append((start, end, turn))
            for ll in link.get("laneLinks", []):
                perms.setdefault((start, int(ll["startLaneIndex"])), set()).add(turn)

    roads = {}
    headings = {}
    ignored = set()
    for k, r in enumerate(raw_roads):
        path = f"roadnet.roads[{k}]"
        rid = _get(r, "id", path)
        points = _get(r, "points", path)
        start, end = _get(r, "startIntersection", path), _get(r, "endIntersection", path)
        for endpoint in (start, end):
            if endpoint not in virtual:
                raise CityFlowParseError(path, f"unknown intersection {endpoint!r}")
        length = sum(
            math.hypot(float(b["x"]) - float(a["x"]), float(b["y"]) - float(a["y"]))
            for a, b in zip(points, points[1:])
        )
        raw_lanes = _get(r, "lanes", path)
        if not raw_lanes:
            raise CityFlowParseError(path, "road has no lanes")
        speeds = [float(_get(l, "maxSpeed", f"{path}.lanes[{i}]")) for i, l in enumerate(raw_lanes)]
        if len(set(speeds)) > 1:
            ignored.add("per-lane speed overrides")
        if len(points) > 2:
            ignored.add("curved road geometry")
        lanes = []
        for i in range(len(raw_lanes)):
            turns = perms.get((rid, i))
            if turns is None:
                # lane feeding no link (e.g. ends at a boundary node)
                turns = {"left", "straight", "right"}
            lanes.append(Lane(f"{rid}_{i}", rid, i, frozenset(turns)))
        roads[rid] = Road(rid, start, end, length, max(speeds), tuple(lanes))
        headings[rid] = (_heading(points, True, path), _heading(points, False, path))
    for what in sorted(ignored):
        log.warning("ignoring %s in roadnet", what)

    inters = []
    for node in nodes:
        nid = node["id"]
        if virtual[nid]:
            continue
        in_by_side, out_by_side = {}, {}
        for rid, road in roads.items():
            if road.end == nid:
                side = side_of_heading(*headings[rid][0], arriving=True)
                if side in in_by_side:
                    raise UnsupportedTopologyError(f"{nid}: two incoming roads on side {side}")
                in_by_side[side] = rid
            if road.start == nid:
                side = side_of_heading(*headings[rid][1], arriving=False)
                if side in out_by_side:
                    raise UnsupportedTopologyError(f"{nid}: two outgoing roads on side {side}")
                out_by_side[side] = rid
        if len(in_by_side) != 4 or len(out_by_side) != 4:
            raise UnsupportedTopologyError(
                f"{nid}: signalized node with {len(in_by_side)} incoming / {len(out_by_side)} "
                "outgoing roads; only four-way intersections are supported")
        inters.append(assemble_intersection(nid, in_by_side, out_by_side, roads, links.get(nid, [])))

    return TrafficNetwork(
        tuple(inters), tuple(roads.values()),
        frozenset(n for n, v in virtual.items() if v), xy,
        provenance=f"cityflow roadnet: {len(inters)} signalized nodes; "
                   "light phases remapped to [NS-straight, EW-straight, NS-left, EW-left], "
                   "right turns always permitted",
    )


def parse_flow(doc, network: TrafficNetwork) -> FlowSpec:
    if not isinstance(doc, list):
        raise CityFlowParseError("flow", "expected a JSON array")
    vehicles = []
    lengths, gaps = set(), set()
    for k, entry in enumerate(doc):
        path = f"flow[{k}]"
        route = tuple(_get(entry, "route", path))
        network.validate_route(route, k)
        veh = entry.get("vehicle", {})
        lengths.add(float(veh.get("length", 5.0)))
        gaps.add(float(veh.get("minGap", 2.5)))
        start = float(entry.get("startTime", 0))
        end = float(entry.get("endTime", start))
        interval = float(entry.get("interval", 1.0))
        if start < 0:
            raise CityFlowParseError(path, "negative startTime")
        if end < start or interval <= 0:
            vehicles.append(FlowVehicle(start, route))
            continue
        n = int(math.floor((end - start) / interval + 1e-9)) + 1
        vehicles.extend(FlowVehicle(start + i * interval, route) for i in range(n))
    if len(lengths) > 1 or len(gaps) > 1:
        log.warning("heterogeneous vehicle sizes in flow; using the first entry's values")
    vehicles.sort(key=lambda v: v.t)
    first = doc[0].get("vehicle", {}) if doc else {}
    return FlowSpec(tuple(vehicles), float(first.get("length", 5.0)), float(first.get("minGap", 2.5)))


def load_cityflow(roadnet_bytes: Union[bytes, str], flow_bytes: Union[bytes, str]):
    """Parse a CityFlow roadnet and flow pair into ``(TrafficNetwork, FlowSpec)``."""
    network = parse_roadnet(_parse(roadnet_bytes, "roadnet"))
    return network, parse_flow(_parse(flow_bytes, "flow"), network)


def to_cityflow_roadnet(network: TrafficNetwork) -> dict:
    """CityFlow roadnet document for ``network`` (straight roads, one light phase per phase)."""
    intersections = []
    inter_ids = {i.id for i in network.intersections}
    for nid in sorted(set(network.node_xy) | inter_ids | set(network.boundary_nodes)):
        x, y = network.node_xy.get(nid, (0.0, 0.0))
        node = {
            "id": nid,
            "point": {"x": x, "y": y},
            "width": 0 if nid in network.boundary_nodes else 10,
            "roads": [r.id for r in network.roads if nid in (r.start, r.end)],
            "roadLinks": [],
            "trafficLight": {"roadLinkIndices": [], "lightphases": []},
            "virtual": nid in network.boundary_nodes,
        }
        if nid in inter_ids:
            inter = network.intersection(nid)
            for k, m in enumerate(inter.movements):
                out = network.road(m.out_road)
                node["roadLinks"].append({
                    "type": _TYPE_OF_TURN[m.turn],
                    "startRoad": m.in_road,
                    "endRoad": m.out_road,
                    "direction": SIDES.index(SIDES[inter.in_roads.index(m.in_road)]),
                    "laneLinks": [
                        {"startLaneIndex": network.lane(a).index, "endLaneIndex": lane.index, "points": []}
                        for a in m.in_lanes for lane in out.lanes
                    ],
                })
            node["trafficLight"]["roadLinkIndices"] = list(range(len(inter.movements)))
            rights = [k for k, m in enumerate(inter.movements) if m.turn == "right"]
            phases = [{"time": 5, "availableRoadLinks": rights}]
            for ph in inter.phases:
                idx = sorted(inter.movements.index(m) for m in ph.movements)
                phases.append({"time": 30, "availableRoadLinks": sorted(idx + rights)})
            node["trafficLight"]["lightphases"] = phases
        intersections.append(node)
    roads = []
    for r in network.roads:
        a, b = network.node_xy[r.start], network.node_xy[r.end]
        roads.append({
            "id": r.id,
            "points": [{"x": a[0], "y": a[1]}, {"x": b[0], "y": b[1]}],
            "lanes": [{"width": 3, "maxSpeed": r.max_speed} for _ in r.lanes],
            "startIntersection": r.start,
            "endIntersection": r.end,
        })
    return {"intersections": intersections, "roads": roads}


def to_cityflow_flow(flow: FlowSpec) -> list:
    veh = {
        "length": flow.vehicle_length, "width": 2.0, "maxPosAcc": 2.0, "maxNegAcc": 4.5,
        "usualPosAcc": 2.0, "usualNegAcc": 4.5, "minGap": flow.min_gap,
        "maxSpeed": 11.111, "headwayTime": 2,
    }
    return [
        {"vehicle": dict(veh), "route": list(v.route), "interval": 1.0,
         "startTime": v.t, "endTime": v.t}
        for v in flow.vehicles
    ]
