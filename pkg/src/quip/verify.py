"""Acceptance suites on synthetic instances.

Each suite returns a list of :class:`CheckResult`.  The CLI ``verify``
command and the acceptance tests both call these functions, so the
thresholds live in one place.
"""

import inspect
import time
from dataclasses import dataclass

import numpy as np

from . import _rng
from .analysis import (
    audit_trace_bound,
    closed_form_avg,
    closed_form_worst,
    counterexample_losses,
    estimate_avg_loss,
    estimate_worst_loss,
    mu_after_rotation,
    proxy_loss,
    worst_case_feedback_run,
)
from .clamp_safe import quantize_clamp_safe, solve_constrained
from .incoherence import quip
from .linalg import generate_lowrank_psd, ldl_decompose, random_psd
from .matio import (
    decode_matrix,
    decode_quantized,
    encode_matrix,
    encode_quantized,
)
from .rounding import RoundingConfig, greedy_pass, ldlq, optq_reference

SIGMA = 3.0
_INSTANCE_STREAM = 1 << 40


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}".rstrip()


def _gen(seed, k=0):
    return _rng.generator(seed, _INSTANCE_STREAM + k)


def _damped_psd(n, seed, damping=0.01):
    h = random_psd(n, seed, samples=max(n // 2, 1))
    return h + damping * np.mean(np.diag(h)) * np.eye(n)


def _lowrank(n, rank, seed):
    spectrum = np.geomspace(4.0, 0.05, rank) if rank > 1 else np.array([2.0])
    return generate_lowrank_psd(n, rank, spectrum, seed)


def _within(mean, se, target, sigma=SIGMA):
    z = (mean - target) / se if se > 0 else (0.0 if mean == target else np.inf)
    return abs(z) <= sigma, f"mean={mean:.6g} se={se:.3g} target={target:.6g} z={z:+.2f}"


def suite_equivalence(instances=50, large=True, bits=4):
    """LDLQ and the error-propagation reference give identical codes."""
    cfg = RoundingConfig(bits)
    top = 2 ** bits - 1
    mismatched = []
    for i in range(instances):
        g = _gen(i)
        m, n = (int(v) for v in g.integers(8, 257, size=2))
        w = g.random((m, n))
        if i % 2:
            w *= top
        h = _damped_psd(n, i)
        if not np.array_equal(ldlq(w, h, cfg), optq_reference(w, h, cfg)):
            mismatched.append(i)
    out = [CheckResult("equivalence.random_instances", not mismatched,
                       f"{instances - len(mismatched)}/{instances} identical")]
    if large:
        t0 = time.perf_counter()
        g = _gen(10_000)
        w = g.random((1000, 1000)) * top
        h = _damped_psd(1000, 10_000)
        a, b = ldlq(w, h, cfg), optq_reference(w, h, cfg)
        out.append(CheckResult("equivalence.1000x1000", bool(np.array_equal(a, b)),
                               f"differing={int(np.count_nonzero(a != b))} "
                               f"time={time.perf_counter() - t0:.1f}s"))
    return out


def suite_losses(n=64, m=16, trials=2000, seed=0, threads=1):
    """Average losses against ``(m / 12)`` and ``(m / 6)`` times ``tr(H)`` or ``tr(D)``."""
    h = _lowrank(n, n // 4, seed)
    out = []
    for method in ("near", "stoch", "ldlq", "ldlq_stoch"):
        mean, se = estimate_avg_loss(method, h, m, trials, seed, threads)
        ok, detail = _within(mean, se, closed_form_avg(method, h, m))
        out.append(CheckResult(f"losses.avg.{method}", ok, detail))
    return out


def suite_worst(n=64, m=16, eps=1e-3, trials=500, seed=0, threads=1):
    """Losses on the ``1/2 +- eps`` construction against ``(m / 4)`` times the trace."""
    h = _lowrank(n, n // 4, seed + 1)
    out = []
    for method in ("ldlq_stoch", "stoch"):
        mean, se = estimate_worst_loss(method, h, m, eps, trials, seed, threads)
        ok, detail = _within(mean, se, closed_form_worst(method, h, m))
        out.append(CheckResult(f"worst.{method}", ok, detail))
    # nearest LDLQ on the construction is deterministic: exact value
    u = ldl_decompose(h).u_strict
    w, w_hat = worst_case_feedback_run(u, m, eps, seed)
    replay = ldlq(w, h, RoundingConfig(clamp=False))
    loss = proxy_loss(w, w_hat, h)
    exact = closed_form_worst("ldlq", h, m, eps)
    ok = np.array_equal(replay, w_hat) and abs(loss - exact) <= 1e-9 * exact
    out.append(CheckResult("worst.ldlq_nearest_exact", bool(ok),
                           f"loss={loss:.10g} expected={exact:.10g} (m/4)tr(D)={closed_form_worst('ldlq', h, m):.6g}"))
    return out


def suite_trace(instances=100, sizes=(64, 256, 1024), seed=0):
    """``tr(D) <= (mu^2 / n) tr(H^{1/2})^2`` on Haar-rotated PSD matrices."""
    combos = [(n, r) for n in sizes for r in (1, n // 16, n // 4, n)]
    violations = []
    worst = 0.0
    for i in range(instances):
        n, rank = combos[i % len(combos)]
        h = _lowrank(n, rank, seed + i)
        audit = audit_trace_bound(h)
        worst = max(worst, audit.lhs / audit.rhs)
        if not audit.holds:
            violations.append((n, rank, i))
    return [CheckResult("trace.bound", not violations,
                        f"violations={len(violations)}/{instances} max lhs/rhs={worst:.4f}")]


def suite_diagonal(n=64, m=16, trials=2000, seed=0, threads=1):
    """Diagonal H: LDLQ and nearest rounding have the same average loss."""
    spectrum = _gen(seed, 3).uniform(0.1, 2.0, n)
    h = np.diag(spectrum)
    a, sa = estimate_avg_loss("ldlq", h, m, trials, seed, threads)
    b, sb = estimate_avg_loss("near", h, m, trials, seed + 1, threads)
    ok, detail = _within(a - b, float(np.hypot(sa, sb)), 0.0)
    return [CheckResult("diagonal.equal_loss", ok, detail)]


def suite_incoherence(n=1024, seeds=100, threshold=10.0, required=99):
    """Two-factor rotation of a coordinate-aligned H gives ``mu <= threshold``."""
    mus = []
    for s in range(seeds):
        spectrum = _gen(s, 4).uniform(0.1, 2.0, n)
        mus.append(mu_after_rotation(spectrum, s))
    mus = np.array(mus)
    hits = int(np.sum(mus <= threshold))
    q = np.quantile(mus, [0.0, 0.5, 0.99, 1.0])
    return [CheckResult("incoherence.mu_threshold", hits >= required,
                        f"{hits}/{seeds} with mu<={threshold:g} (need {required}); "
                        f"min={q[0]:.2f} median={q[1]:.2f} p99={q[2]:.2f} max={q[3]:.2f} "
                        f"before={np.sqrt(n):.1f}")]


def suite_counterexample(sizes=(16, 64, 256), c=0.01, bits=4):
    """Clamped LDLQ loses to nearest, by a ratio growing with n."""
    ratios = []
    worse = True
    for n in sizes:
        a, b = counterexample_losses(n, 16, c, bits)
        worse &= a > b
        ratios.append(a / b)
    increasing = all(x < y for x, y in zip(ratios, ratios[1:]))
    shown = ", ".join(f"n={n}: {r:.3g}" for n, r in zip(sizes, ratios))
    return [CheckResult("counterexample.ldlq_worse", bool(worse), shown),
            CheckResult("counterexample.ratio_increasing", increasing, shown)]


def suite_greedy(instances=50, passes=10, bits=4, rtol=1e-12):
    """Greedy passes started from LDLQ never increase the proxy loss."""
    cfg = RoundingConfig(bits)
    violations = 0
    for i in range(instances):
        g = _gen(i, 5)
        m, n = (int(v) for v in g.integers(8, 65, size=2))
        w = g.random((m, n)) * (2 ** bits - 1)
        h = _lowrank(n, max(1, n // 4), i) + 0.01 * np.eye(n)
        w_hat = ldlq(w, h, cfg)
        prev = proxy_loss(w, w_hat, h)
        for _ in range(passes):
            w_hat = greedy_pass(w, h, cfg, w_hat)
            cur = proxy_loss(w, w_hat, h)
            if cur > prev * (1 + rtol):
                violations += 1
            prev = cur
    return [CheckResult("greedy.monotone", violations == 0,
                        f"violations={violations} over {instances}x{passes} passes")]


def suite_clamp(trials=200, n=64, m=64, bits=3, delta=0.05):
    """Clamp-safe rounding stays in range with probability at least ``1 - delta``."""
    fired = 0
    for s in range(trials):
        g = _gen(s, 6)
        w = g.standard_normal((m, n))
        h = _lowrank(n, n // 4, s) + 1e-3 * np.eye(n)
        _, stats = quantize_clamp_safe(w, h, bits, delta, s)
        fired += stats.clamp_fired
    limit = delta + SIGMA * np.sqrt(delta * (1 - delta) / trials)
    out = [CheckResult("clamp.fire_fraction", fired / trials <= limit,
                       f"fired={fired}/{trials} limit={limit:.4f}")]
    h = _damped_psd(48, 7)
    factor = solve_constrained(h, 1e6)
    trace_d = float(np.sum(ldl_decompose(h).d))
    rel = abs(factor.objective - trace_d) / trace_d
    out.append(CheckResult("clamp.large_c_matches_ldl", rel <= 1e-6, f"rel={rel:.2e}"))
    return out


def suite_roundtrip(instances=3, n=256, bits=16, rtol=1e-3):
    """Fine-grid quantization round trip and bit-exact serialization."""
    errors = []
    serial_ok = True
    for i in range(instances):
        g = _gen(i, 7)
        w = g.standard_normal((n, n))
        h = _damped_psd(n, 100 + i)
        res = quip(w, h, bits=bits, rho=None, seed=i)
        errors.append(np.linalg.norm(res.w_hat - w) / np.linalg.norm(w))
        blob = encode_quantized(res.layer)
        back = decode_quantized(blob)
        serial_ok &= back == res.layer and encode_quantized(back) == blob
        mat = decode_matrix(encode_matrix(w))
        serial_ok &= mat.tobytes() == w.tobytes()
    return [CheckResult("roundtrip.fine_grid", max(errors) <= rtol,
                        f"max rel error={max(errors):.2e} (limit {rtol:g})"),
            CheckResult("roundtrip.serialization", bool(serial_ok), "bit-exact")]


def suite_determinism(threads=(1, 2, 4), m=96, n=64):
    """Same seed, same bytes, for any thread count."""
    g = _gen(0, 8)
    w = g.standard_normal((m, n))
    h = _damped_psd(n, 5)
    ok = True
    for method in ("ldlq", "stoch", "ldlq_rg"):
        blobs = {encode_quantized(quip(w, h, bits=3, method=method, seed=11, threads=t).layer)
                 for t in threads}
        ok &= len(blobs) == 1
    return [CheckResult("determinism.threads", bool(ok), f"threads={list(threads)}")]


SUITES = {
    "equivalence": suite_equivalence,
    "losses": suite_losses,
    "worst": suite_worst,
    "trace": suite_trace,
    "diagonal": suite_diagonal,
    "incoherence": suite_incoherence,
    "counterexample": suite_counterexample,
    "greedy": suite_greedy,
    "clamp": suite_clamp,
    "roundtrip": suite_roundtrip,
    "determinism": suite_determinism,
}


def run_suite(name, threads=1):
    """Run one suite, or every suite for ``name="all"``."""
    if name == "all":
        return [r for key in SUITES for r in run_suite(key, threads)]
    suite = SUITES[name]
    if "threads" in inspect.signature(suite).parameters and name != "determinism":
        return suite(threads=threads)
    return suite()
