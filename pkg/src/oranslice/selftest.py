"""Quick built-in oracle checks, runnable without the test suite (``oranslice selftest``)."""
from __future__ import annotations

import math

import numpy as np

from .config import NetworkConfig
from .federation import VfrlStack, decode_joint, encode_joint, frl_loss_and_grads
from .harness import eccdf
from .neural import MlpModel, td_loss_grad
from .radio import UNASSIGNED, compute_sinr, link_capacity, pathloss_db
from .scheduler import PpfState, ppf_select
from .xapps import enumerate_partitions


def _rel(a, b) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def check_physics() -> bool:
    cfg = NetworkConfig(num_bs=1)
    ok = abs(float(pathloss_db(1000.0, cfg)) - 128.1) < 1e-12
    alloc = np.full((1, cfg.num_rbs), UNASSIGNED)
    alloc[0, 0] = 0
    gains = np.array([[1e-10]])
    power = 1e-2 * cfg.num_rbs
    expected = 1e-12 / (cfg.rb_bandwidth_hz * 10 ** (-20.4))
    ok &= _rel(compute_sinr(alloc, [power], gains, 0, 0, 0, cfg), expected) < 1e-9
    cap = link_capacity(0, 0, alloc, [power], gains, cfg)
    ok &= _rel(cap, cfg.rb_bandwidth_hz * math.log2(1 + expected)) < 1e-9
    return bool(ok)


def check_partitions() -> bool:
    parts = enumerate_partitions(10, 4)
    return len(parts) == 286 == len(set(parts)) and all(sum(p) == 10 for p in parts) and parts == sorted(parts)


def check_joint_encoding() -> bool:
    return all(decode_joint(encode_joint(a, b, 286), 286) == (a, b) for a in range(10) for b in range(286))


def check_ppf(trials: int = 200) -> bool:
    rng = np.random.default_rng(0)
    for _ in range(trials):
        n = int(rng.integers(1, 6))
        ppf = PpfState(n, 1e-3, window_ttis=4)
        for _ in range(4):
            ppf.update(rng.integers(0, 500, n) * (rng.random(n) < 0.7))
        cands = [(ue, float(rng.uniform(1, 1e6))) for ue in range(n)]
        ratios = [c / max(ppf.avg_rate[ue], ppf.rate_floor) for ue, c in cands]
        if ppf_select(cands, ppf) != int(np.argmax(ratios)):
            return False
    return True


def _fd_check(loss_fn, params, h=1e-5, tol=1e-4) -> bool:
    _, analytic = loss_fn()
    for p, g in zip(params, analytic):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss_fn()[0]
            p[idx] = old - h
            down = loss_fn()[0]
            p[idx] = old
            fd = (up - down) / (2 * h)
            if abs(fd - g[idx]) > tol * max(abs(fd), abs(g[idx]), 1e-6):
                return False
    return True


def check_gradients() -> bool:
    rng = np.random.default_rng(1)
    net = MlpModel((3, 5, 2), rng)
    x, a, y = rng.normal(size=(4, 3)), rng.integers(0, 2, 4), rng.normal(size=4)

    def mlp_loss():
        q, cache = net.forward_cached(x)
        loss, g = td_loss_grad(q, a, y)
        return loss, net.backward(cache, g)[0]

    stack = VfrlStack(3, 2, 2, 2, rng, local_hidden=(3,), global_hidden=(3,), global_init_noise=0.3)
    batch = {"state_a": rng.normal(size=(4, 3)), "state_b": rng.normal(size=(4, 2)),
             "action_a": rng.integers(0, 2, 4), "action_b": rng.integers(0, 2, 4),
             "reward_a": rng.normal(size=4), "reward_b": rng.normal(size=4),
             "next_state_a": rng.normal(size=(4, 3)), "next_state_b": rng.normal(size=(4, 2))}

    def frl_loss():
        loss, grads = frl_loss_and_grads(stack, batch, 0.9)
        return loss, grads["power"] + grads["ra"] + grads["glob"]

    return _fd_check(mlp_loss, net.params) and _fd_check(
        frl_loss, stack.power.params + stack.ra.params + stack.glob.params)


def check_eccdf() -> bool:
    pts = eccdf([1.0, 2.0, 3.0])
    fracs = [f for _, f in pts]
    return pts[1] == (2.0, 1 / 3) and all(a >= b for a, b in zip(fracs, fracs[1:]))


CHECKS = {
    "physics oracles": check_physics,
    "partition enumeration": check_partitions,
    "joint action encoding": check_joint_encoding,
    "ppf selection vs brute force": check_ppf,
    "gradients vs finite differences": check_gradients,
    "eccdf properties": check_eccdf,
}


def run_selftest(emit=print) -> list[str]:
    failures = []
    for name, fn in CHECKS.items():
        ok = fn()
        emit(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)
    return failures
