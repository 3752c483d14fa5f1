import copy
import json
import logging

import pytest

from atsc.cityflow import (CityFlowParseError, load_cityflow, to_cityflow_flow, to_cityflow_roadnet)
from atsc.network import NetworkError, TrafficNetwork, UnsupportedTopologyError, generate_grid, generate_poisson_flow


def _docs(rows, cols, ew=300, ns=300, rate=0.05, horizon=120, seed=0):
    net = generate_grid(rows, cols, ew, ns)
    flow = generate_poisson_flow(net, rate, horizon, seed)
    return net, flow, to_cityflow_roadnet(net), to_cityflow_flow(flow)


@pytest.mark.parametrize("rows,cols,expected", [(3, 4, 12), (4, 4, 16)])
def test_synthesized_jinan_and_hangzhou_layouts(rows, cols, expected):
    _, flow, rn, fl = _docs(rows, cols, 400, 800)
    net, parsed = load_cityflow(json.dumps(rn), json.dumps(fl))
    assert len(net.intersections) == expected
    assert len(parsed.vehicles) == len(flow.vehicles)
    for inter in net.intersections:
        assert len(inter.movements) == 12 and len(inter.phases) == 4
    assert "remapped" in net.provenance


def test_round_trip_structurally_equal():
    net, flow, rn, fl = _docs(2, 3)
    loaded, parsed = load_cityflow(json.dumps(rn).encode(), json.dumps(fl).encode())
    again, _ = load_cityflow(json.dumps(to_cityflow_roadnet(loaded)), "[]")
    assert again == loaded
    assert TrafficNetwork.from_json(loaded.to_json()) == loaded
    assert [v.route for v in parsed.vehicles] == [v.route for v in flow.vehicles]
    # same geometry and movements as the generator
    assert {r.id: r.length for r in loaded.roads} == {r.id: r.length for r in net.roads}
    assert ({i.id: i.movements for i in loaded.intersections}
            == {i.id: i.movements for i in net.intersections})


def test_empty_flow_loads():
    _, _, rn, _ = _docs(1, 1)
    net, flow = load_cityflow(json.dumps(rn), "[]")
    assert len(flow.vehicles) == 0 and len(net.intersections) == 1


def test_malformed_json_reports_location():
    with pytest.raises(CityFlowParseError, match=r"roadnet:1:"):
        load_cityflow(b'{"intersections": [', b"[]")
    _, _, rn, _ = _docs(1, 1)
    with pytest.raises(CityFlowParseError, match=r"flow:"):
        load_cityflow(json.dumps(rn), b"[{]")


def test_missing_field_reports_path():
    _, _, rn, _ = _docs(1, 1)
    del rn["roads"][2]["lanes"]
    with pytest.raises(CityFlowParseError) as err:
        load_cityflow(json.dumps(rn), "[]")
    assert err.value.path == "roadnet.roads[2]"


def test_disconnected_route_names_index():
    _, _, rn, _ = _docs(1, 1)
    flow = [{"route": ["road_0_1_0", "road_1_1_0"]}, {"route": ["road_0_1_0", "road_1_1_2"]}]
    with pytest.raises(NetworkError, match="route 1"):
        load_cityflow(json.dumps(rn), json.dumps(flow))


def test_three_way_node_is_unsupported():
    _, _, rn, _ = _docs(1, 1)
    rn = copy.deepcopy(rn)
    gone = {"road_2_1_2", "road_1_1_0"}
    rn["roads"] = [r for r in rn["roads"] if r["id"] not in gone]
    for node in rn["intersections"]:
        node["roads"] = [r for r in node["roads"] if r not in gone]
        node["roadLinks"] = [l for l in node["roadLinks"]
                             if l["startRoad"] not in gone and l["endRoad"] not in gone]
    with pytest.raises(UnsupportedTopologyError, match="four-way"):
        load_cityflow(json.dumps(rn), "[]")


def test_flow_interval_expansion():
    _, _, rn, _ = _docs(1, 1)
    flow = [{"route": ["road_0_1_0", "road_1_1_0"], "startTime": 10, "endTime": 20, "interval": 5}]
    _, spec = load_cityflow(json.dumps(rn), json.dumps(flow))
    assert [v.t for v in spec.vehicles] == [10.0, 15.0, 20.0]


def test_curved_roads_warn_but_load(caplog):
    _, _, rn, _ = _docs(1, 1)
    r = rn["roads"][0]
    a, b = r["points"]
    mid = {"x": (a["x"] + b["x"]) / 2, "y": (a["y"] + b["y"]) / 2}
    r["points"] = [a, mid, b]
    with caplog.at_level(logging.WARNING, logger="atsc.cityflow"):
        net, _ = load_cityflow(json.dumps(rn), "[]")
    assert len(net.intersections) == 1
    assert any("curved" in rec.getMessage() for rec in caplog.records)
