import random
from fractions import Fraction

import pytest

from cyber_range.sim import (
    BLUE_SLEEP,
    RED_SLEEP,
    Access,
    ActionError,
    Activity,
    BlueAction,
    BlueObservation,
    BlueVerb,
    RedAction,
    RedVerb,
    SuccessProbabilities,
    compute_reward,
    decode_bits52,
    encode_ak,
    encode_bits52,
    encode_sr,
    reset,
    step,
)
from cyber_range.topology import HostKind

CERTAIN = SuccessProbabilities(**{k: 1.0 for k in SuccessProbabilities().to_dict()})


def addr(state, name):
    return state.book.addr_of(name)


def test_reset_clear_observation(net):
    state, obs = reset(net, 7)
    assert obs.bits52 == (0,) * 52
    assert state.turn == 0
    assert state.last_blue_success is True
    assert obs.bits_ak[-1] == 1


def test_reset_foothold_user(net):
    for seed in range(5):
        state, _ = reset(net, seed)
        assert state.host_state(net.foothold_host).access is Access.USER
        others = [h for n, h in zip(net.host_names, state.hosts) if n != net.foothold_host]
        assert all(h.access is Access.NONE and h.activity is Activity.NONE for h in others)
        assert state.red_position == [net.foothold_host]


def test_reset_deterministic(net):
    a, _ = reset(net, 42)
    b, _ = reset(net, 42)
    assert a.snapshot() == b.snapshot()
    assert a.digest() == b.digest()


def test_sleep_sleep_reward_zero(net):
    state, _ = reset(net, 1)
    out = step(state, BLUE_SLEEP, RED_SLEEP)
    assert out.reward == 0.0
    assert out.turn == 0 and state.turn == 1


def test_decoy_trigger(net):
    state, _ = reset(net, 3, CERTAIN)
    out = step(state, BlueAction(BlueVerb.DECOY, "User2"), RED_SLEEP)
    assert out.blue_success
    decoy_port = state.host_state("User2").decoys[0].port
    out = step(state, BLUE_SLEEP, RedAction(RedVerb.EXPLOIT_REMOTE_SERVICE, addr(state, "User2"), decoy_port))
    assert out.red_success is False
    assert out.decoy_triggered
    assert out.blue_obs.activity[net.index("User2")] == Activity.EXPLOITED
    assert state.host_state("User2").access is Access.NONE


def test_restore_foothold_fails(net):
    state, _ = reset(net, 3, CERTAIN)
    before = state.host_state(net.foothold_host).access
    out = step(state, BlueAction(BlueVerb.RESTORE, net.foothold_host), RED_SLEEP)
    assert out.blue_success is False
    assert state.host_state(net.foothold_host).access is before
    assert out.reward == 0.0


def test_restore_clean_host_costs_one(net):
    state, _ = reset(net, 3, CERTAIN)
    out = step(state, BlueAction(BlueVerb.RESTORE, "Enterprise0"), RED_SLEEP)
    assert out.blue_success
    assert out.reward == -1.0


def test_exploit_escalate_and_restore(net):
    state, _ = reset(net, 4, CERTAIN)
    u1 = addr(state, "User1")
    out = step(state, BLUE_SLEEP, RedAction(RedVerb.EXPLOIT_REMOTE_SERVICE, u1, 445))
    assert out.red_success and state.host_state("User1").access is Access.USER
    out = step(state, BLUE_SLEEP, RedAction(RedVerb.PRIVILEGE_ESCALATE, u1))
    assert out.red_success and state.host_state("User1").access is Access.ADMIN
    assert out.reward == -0.1
    assert out.red_view.host_kind is HostKind.USER
    assert 2 in out.red_view.revealed_subnets
    # blue only learns access through analysis
    assert out.blue_obs.access[net.index("User1")] == Access.NONE
    out = step(state, BlueAction(BlueVerb.ANALYSE, "User1"), RED_SLEEP)
    assert out.blue_obs.access[net.index("User1")] == Access.ADMIN
    out = step(state, BlueAction(BlueVerb.REMOVE, "User1"), RED_SLEEP)
    assert out.blue_success is False
    assert state.host_state("User1").access is Access.ADMIN
    out = step(state, BlueAction(BlueVerb.RESTORE, "User1"), RED_SLEEP)
    assert out.blue_success and state.host_state("User1").access is Access.NONE
    assert out.reward == -1.0


def test_remove_clears_user(net):
    state, _ = reset(net, 4, CERTAIN)
    step(state, BLUE_SLEEP, RedAction(RedVerb.EXPLOIT_REMOTE_SERVICE, addr(state, "User3"), 3389))
    out = step(state, BlueAction(BlueVerb.REMOVE, "User3"), RED_SLEEP)
    assert out.blue_success
    assert state.host_state("User3").access is Access.NONE


def test_exploit_across_firewall_fails(net):
    state, _ = reset(net, 4, CERTAIN)
    for host in ("OpHost0", "OpServer"):
        out = step(state, BLUE_SLEEP, RedAction(RedVerb.EXPLOIT_REMOTE_SERVICE, addr(state, host), 445))
        assert not out.red_success
        assert out.blue_obs.activity[net.index(host)] == Activity.NONE


def test_privilege_escalate_needs_user(net):
    state, _ = reset(net, 4, CERTAIN)
    out = step(state, BLUE_SLEEP, RedAction(RedVerb.PRIVILEGE_ESCALATE, addr(state, "User2")))
    assert not out.red_success


def test_impact_needs_admin(net):
    state, _ = reset(net, 4, CERTAIN)
    out = step(state, BLUE_SLEEP, RedAction(RedVerb.IMPACT, addr(state, "OpServer")))
    assert not out.red_success and not out.impact


def test_full_kill_chain_impact_reward(net):
    state, _ = reset(net, 4, CERTAIN)
    chain = [("User1", 445), ("Enterprise1", 8080), ("OpHost1", 445), ("OpServer", 502)]
    for host, port in chain:
        a = addr(state, host)
        assert step(state, BLUE_SLEEP, RedAction(RedVerb.EXPLOIT_REMOTE_SERVICE, a, port)).red_success
        assert step(state, BLUE_SLEEP, RedAction(RedVerb.PRIVILEGE_ESCALATE, a)).red_success
    out = step(state, BLUE_SLEEP, RedAction(RedVerb.IMPACT, addr(state, "OpServer")))
    assert out.impact
    # User1 admin (-0.1) + Enterprise1, OpHost1, OpServer admin (-3) + impact (-10)
    assert out.reward == -13.1
    assert state.host_state("OpServer").impacted


def test_discover_remote_systems(net):
    state, _ = reset(net, 2, CERTAIN)
    out = step(state, BLUE_SLEEP, RedAction(RedVerb.DISCOVER_REMOTE_SYSTEMS, 1))
    assert out.red_success
    assert sorted(state.book.resolve(a) for a in out.red_view.discovered) == ["User0", "User1", "User2", "User3", "User4"]
    out = step(state, BLUE_SLEEP, RedAction(RedVerb.DISCOVER_REMOTE_SYSTEMS, 3))
    assert not out.red_success
    out = step(state, BLUE_SLEEP, RedAction(RedVerb.DISCOVER_REMOTE_SYSTEMS, 2))
    names = {state.book.resolve(a) for a in out.red_view.discovered}
    assert "Defender" not in names and "Enterprise0" in names


def test_scan_sets_scanned_and_lists_services(net):
    state, _ = reset(net, 2, CERTAIN)
    out = step(state, BLUE_SLEEP, RedAction(RedVerb.DISCOVER_NETWORK_SERVICES, addr(state, "User4")))
    assert out.red_success
    assert out.blue_obs.activity[net.index("User4")] == Activity.SCANNED
    assert [p for p, _, _ in out.red_view.services] == sorted(s.port for s in net.host("User4").services)
    # activity is transient: a quiet turn clears it
    out = step(state, BLUE_SLEEP, RED_SLEEP)
    assert out.blue_obs.bits52 == (0,) * 52


@pytest.mark.parametrize(
    "red,blue",
    [
        (RedAction(RedVerb.IMPACT, "not-an-address"), BLUE_SLEEP),
        (RedAction(RedVerb.DISCOVER_REMOTE_SYSTEMS, 9), BLUE_SLEEP),
        (RedAction(RedVerb.SLEEP, 1), BLUE_SLEEP),
        (RED_SLEEP, BlueAction(BlueVerb.RESTORE)),
        (RED_SLEEP, BlueAction(BlueVerb.ANALYSE, "Nope")),
        (RED_SLEEP, "Sleep"),
    ],
)
def test_malformed_actions(net, red, blue):
    state, _ = reset(net, 2)
    with pytest.raises(ActionError):
        step(state, blue, red)


def test_malformed_exploit_and_impact(net):
    state, _ = reset(net, 2)
    with pytest.raises(ActionError):
        step(state, BLUE_SLEEP, RedAction(RedVerb.EXPLOIT_REMOTE_SERVICE, addr(state, "User1")))
    with pytest.raises(ActionError):
        step(state, BLUE_SLEEP, RedAction(RedVerb.IMPACT, addr(state, "User1")))


def test_probabilities_validated():
    with pytest.raises(ValueError):
        SuccessProbabilities(restore=1.5)
    with pytest.raises(ValueError):
        SuccessProbabilities.from_dict({"teleport": 0.5})


# -- reward examples ----------------------------------------------------------------


def _with_admin(net, names):
    state, _ = reset(net, 0)
    for n in names:
        state.host_state(n).access = Access.ADMIN
    return state


def test_reward_two_admin_user_hosts(net):
    state = _with_admin(net, ["User2", "User3"])
    assert compute_reward(state, BLUE_SLEEP, {"impact": False}, True) == -0.2


def test_reward_opserver_impact(net):
    state = _with_admin(net, ["OpServer"])
    assert compute_reward(state, BLUE_SLEEP, {"impact": True}, True) == -11.0


def test_reward_clean_sleep(net):
    state, _ = reset(net, 0)
    assert compute_reward(state, BLUE_SLEEP, False) == 0.0


def test_reward_successful_restore(net):
    state, _ = reset(net, 0)
    assert compute_reward(state, BlueAction(BlueVerb.RESTORE, "Enterprise0"), False, True) == -1.0
    assert compute_reward(state, BlueAction(BlueVerb.RESTORE, "Enterprise0"), False, False) == 0.0


def test_reward_lower_bound(net):
    state = _with_admin(net, list(net.host_names))
    r = compute_reward(state, BlueAction(BlueVerb.RESTORE, "Enterprise0"), True, True)
    assert r == float(Fraction(-5, 10) + (-8) + (-10) + (-1))


# -- encodings ----------------------------------------------------------------


def test_encode_bits52_examples():
    clear = [(0, 0)] * 13
    assert encode_bits52(clear) == (0,) * 52
    k = list(clear)
    k[0] = (Activity.SCANNED, Access.NONE)
    bits = encode_bits52(k)
    assert bits[:4] == (0, 1, 0, 0) and sum(bits) == 1
    k = list(clear)
    k[12] = (Activity.EXPLOITED, Access.ADMIN)
    assert encode_bits52(k)[-4:] == (1, 1, 1, 1)
    k[3] = (Activity.NONE, Access.USER)
    assert encode_bits52(k)[12:16] == (0, 0, 0, 1)


def test_encode_ak_examples():
    z = (0,) * 52
    assert encode_ak(z, True) == z + (1,)
    assert encode_ak(z, False) == z + (0,)


def test_encode_sr_examples():
    clear = [(0, 0)] * 13
    assert encode_sr(clear, True) == (0.0,) * 26 + (1.0,)
    k = list(clear)
    k[0] = (2, 2)
    sr = encode_sr(k, False)
    assert sr[0] == sr[1] == 1.0 and sr[-1] == 0.0
    k[1] = (1, 1)
    assert encode_sr(k, True)[2:4] == (0.5, 0.5)


def test_decode_rejects_bad_codes():
    with pytest.raises(ValueError):
        decode_bits52([1, 0, 0, 0])
    with pytest.raises(ValueError):
        decode_bits52([0] * 51)


def test_observation_encodings():
    obs = BlueObservation(activity=(2,) + (0,) * 12, access=(0,) * 12 + (1,), last_success=False)
    assert len(obs.bits52) == 52 and len(obs.bits_ak) == 53 and len(obs.floats_sr) == 27
    assert obs.encoding("ak") == obs.bits_ak
    assert BlueObservation.from_bits52(obs.bits52, False) == obs
    assert obs.bits52_hex() == format(int("".join(map(str, obs.bits52)), 2), "013x")
    with pytest.raises(ValueError):
        obs.encoding("rgb")


def test_step_determinism(net):
    def run(seed):
        state, _ = reset(net, seed)
        r = random.Random(seed)
        outs = []
        hosts = list(net.host_names)
        for _ in range(40):
            target = r.choice(hosts)
            blue = r.choice([BLUE_SLEEP, BlueAction(BlueVerb.ANALYSE, target), BlueAction(BlueVerb.DECOY, target)])
            red = RedAction(RedVerb.DISCOVER_NETWORK_SERVICES, state.book.addr_of(r.choice(hosts[:9])))
            o = step(state, blue, red)
            outs.append((o.red_success, o.blue_success, o.reward, o.blue_obs, state.digest()))
        return outs

    assert run(17) == run(17)
