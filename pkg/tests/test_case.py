import dataclasses

import pytest

from gridcascade.case import (
    DEFAULT_COST,
    BusKind,
    CaseFormatError,
    builtin_case,
    load_case,
    parse_case,
    serialize_case,
    validate,
)

from conftest import TWO_BUS


def test_ieee14_counts(net14):
    assert (net14.n_bus, net14.n_branch, net14.n_gen) == (14, 20, 5)
    assert validate(net14) == []


def test_ieee118_counts(net118):
    assert (net118.n_bus, net118.n_branch, net118.n_gen) == (118, 179, 54)
    assert validate(net118) == []


def test_two_bus_counts(two_bus):
    assert (two_bus.n_bus, two_bus.n_branch, two_bus.n_gen) == (2, 1, 1)
    assert two_bus.buses[0].kind == BusKind.SLACK
    assert two_bus.generators[0].cost_coeffs == (0.0, 20.0, 0.01)
    assert two_bus.generators[0].cost(100.0) == pytest.approx(2100.0)


def test_total_load_is_column_sum(net14):
    # pd column of the shipped 14-bus case
    pd = [0, 21.7, 94.2, 47.8, 7.6, 11.2, 0, 0, 29.5, 9, 3.5, 6.1, 13.5, 14.9]
    assert net14.total_load == pytest.approx(sum(pd), abs=1e-9)


@pytest.mark.parametrize("name", ["ieee14", "ieee118"])
def test_round_trip(name):
    net = builtin_case(name)
    again = parse_case(serialize_case(net))
    assert again == net
    assert again.name == net.name


def test_round_trip_two_bus(two_bus):
    assert parse_case(serialize_case(two_bus)) == two_bus


def test_load_case_from_path(tmp_path, two_bus):
    p = tmp_path / "x.case"
    p.write_text(TWO_BUS, encoding="utf-8")
    assert load_case(p) == two_bus
    assert load_case("ieee14").n_bus == 14


def test_missing_gencost_gets_flat_price():
    text = TWO_BUS.split("[gencost]")[0]
    net = parse_case(text)
    assert net.generators[0].cost_coeffs == DEFAULT_COST
    assert net.generators[0].cost(50.0) == pytest.approx(1000.0)


def test_syntax_error_reports_line():
    text = TWO_BUS.replace("2 1 100 0 0 0 1.0 0 0", "2 1 abc 0 0 0 1.0 0 0")
    with pytest.raises(CaseFormatError) as err:
        parse_case(text)
    assert err.value.line == 7


@pytest.mark.parametrize(
    "edit",
    [
        lambda t: t.replace("1 2 0 0.1 0 0 0 1", "1 9 0 0.1 0 0 0 1"),  # dangling bus
        lambda t: t.replace("2 1 100 0", "1 1 100 0"),  # duplicate id
        lambda t: t.split("[branch]")[0],  # missing table
    ],
)
def test_semantic_errors(edit):
    with pytest.raises(CaseFormatError):
        parse_case(edit(TWO_BUS))


def test_validate_names_bad_branch(net14):
    br = dataclasses.replace(net14.branches[3], to_bus=99)
    bad = dataclasses.replace(net14, branches=net14.branches[:3] + (br,) + net14.branches[4:])
    problems = validate(bad)
    assert len(problems) == 1
    assert "branch 3" in problems[0] and "99" in problems[0]


def test_validate_names_bad_generator(net14):
    g = dataclasses.replace(net14.generators[2], p_min=500.0)
    bad = dataclasses.replace(net14, generators=net14.generators[:2] + (g,) + net14.generators[3:])
    problems = validate(bad)
    assert len(problems) == 1
    assert "generator 2" in problems[0]


def test_shipped_costs_non_decreasing(net14, net118):
    for net in (net14, net118):
        for g in net.generators:
            ps = [g.p_max * k / 20 for k in range(21)]
            costs = [g.cost(p) for p in ps]
            assert all(b >= a for a, b in zip(costs, costs[1:]))
