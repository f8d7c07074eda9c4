"""Command-line front end: single runs, budget-matched comparisons, verification suites."""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import alignlab
from .config import ConfigError, RunConfig, load_config
from .estimators import reinforce_mu_grad_mean
from .optimizers import init_mu, run
from .sampling import SamplingPolicy, alignments, make_rng, random_unit
from .trace import TraceRecord, write_trace

# Fields that must agree across the configs of one comparison.
OBJECTIVE_FIELDS = ("objective", "data", "intercept", "normalize_rows", "dim", "diag_min", "diag_max")
SUMMARY_HEADER = ("label", "method", "K", "iterations", "oracle_calls", "n_seeds",
                  "final_loss_median", "final_loss_iqr", "final_grad_norm_median", "final_grad_norm_iqr")
LANDSCAPE_HEADER = ("mu1", "mu2", "mean", "stderr")
DEFAULT_OUT = "zoldsd_out"


# ---------------------------------------------------------------- runs

def execute(cfg: RunConfig) -> list[TraceRecord]:
    """Run one config; directions, mu init and data use disjoint seed streams."""
    oracle = cfg.objective_oracle()
    x0 = np.zeros(oracle.dim)
    mu0 = init_mu(cfg.mu_init, oracle.dim, make_rng(cfg.seed, 1), oracle, x0, cfg.mu_scale)
    _, records = run(cfg.optimizer_config(), oracle, x0, mu0, make_rng(cfg.seed, 0),
                     horizon=cfg.horizon, budget=cfg.budget, run_id=cfg.run_id, seed=cfg.seed)
    return records


def run_to_file(cfg: RunConfig, out: str | Path) -> Path:
    return write_trace(execute(cfg), Path(out) / f"{cfg.run_id}.csv")


def _final(cfg: RunConfig) -> tuple[float, float | None, int, int]:
    recs = execute(cfg)
    last = recs[-1]
    return last.loss, last.grad_norm, len(recs), last.oracle_calls


def _median_iqr(values) -> tuple[float, float]:
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return float(med), float(q3 - q1)


def check_comparable(cfgs: list[RunConfig]) -> None:
    """Refuse comparisons that would not share objective and oracle budget."""
    if len(cfgs) < 2:
        raise ConfigError("config: compare needs at least two configs")
    ref = cfgs[0]
    for cfg in cfgs:
        if cfg.budget is None:
            raise ConfigError("budget: compare requires an oracle budget in every config")
        if cfg.budget != ref.budget:
            raise ConfigError(f"budget: mismatch ({ref.budget} vs {cfg.budget})")
        for name in OBJECTIVE_FIELDS:
            if getattr(cfg, name) != getattr(ref, name):
                raise ConfigError(f"{name}: configs disagree on the objective")


def compare(cfgs: list[RunConfig], labels: list[str], seeds: list[int], workers: int = 1,
            out: str | Path | None = None) -> list[tuple]:
    """Final-loss and final-gradient-norm summary per config over the seed list."""
    check_comparable(cfgs)
    jobs = [cfg.with_seed(s) for cfg in cfgs for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            finals = list(pool.map(_final, jobs))
    else:
        finals = [_final(j) for j in jobs]
    rows = []
    for i, (cfg, label) in enumerate(zip(cfgs, labels)):
        chunk = finals[i * len(seeds):(i + 1) * len(seeds)]
        iters = {c[2] for c in chunk}
        calls = {c[3] for c in chunk}
        assert len(iters) == 1 and len(calls) == 1
        loss_med, loss_iqr = _median_iqr(c[0] for c in chunk)
        gn_med, gn_iqr = _median_iqr(c[1] for c in chunk)
        rows.append((label, cfg.optimizer, cfg.K, iters.pop(), calls.pop(), len(seeds),
                     loss_med, loss_iqr, gn_med, gn_iqr))
    if out is not None:
        write_rows(Path(out) / "compare_summary.csv", SUMMARY_HEADER, rows)
    return rows


def write_rows(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


# ---------------------------------------------------------------- verification suites

@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: value={self.value:.6g} threshold={self.threshold:.6g} {self.detail}".rstrip()


def suite_alignment_1_over_d(seed: int = 0, n: int = 100_000, dims=(4, 16, 64, 256)) -> list[Check]:
    """E[C] at mu = 0 against 1/d; margin reported as |mean d - 1| and in stderr units."""
    rng = make_rng(seed, 0)
    checks = []
    for d in dims:
        g = random_unit(d, rng)
        est = alignlab.mc_expected_alignment(SamplingPolicy(np.zeros(d), 1.0), g, n, rng)
        z = abs(est.mean - 1 / d) / est.stderr
        checks.append(Check(f"alignment_1_over_d d={d}", z, 3.0, z <= 3.0,
                            f"|mean*d-1|={abs(est.mean * d - 1):.3g}"))
    return checks


def suite_hessian_bound(seed: int = 0, probes: int = 1000, dims=(2, 8, 32), tol: float = 1e-3) -> list[Check]:
    """max numeric |Hess psi_a(u)| / (20/|u|^2) over random probes per dimension."""
    rng = make_rng(seed, 0)
    checks = []
    per_dim = [probes // len(dims) + (i < probes % len(dims)) for i in range(len(dims))]
    for d, m in zip(dims, per_dim):
        worst = 0.0
        for _ in range(m):
            a = random_unit(d, rng)
            u = rng.standard_normal(d) * math.exp(rng.uniform(-2, 2))
            worst = max(worst, alignlab.numeric_hessian_psi(a, u).ratio)
        checks.append(Check(f"hessian_bound d={d} probes={m}", worst, 1 + tol, worst <= 1 + tol,
                            "max hessian_norm/bound"))
    return checks


def suite_landscape(seed: int = 0, resolution: int = 21, n: int = 4000, epsilon: float = 0.5,
                    out: str | Path | None = None) -> list[Check]:
    """Alignment landscape grid for g = (1, 0); mirrored cells must agree within 3 combined stderr."""
    rng = make_rng(seed, 0)
    a, b, grid = alignlab.landscape_grid(np.array([1.0, 0.0]), epsilon, resolution=resolution, n=n, rng=rng)
    if out is not None:
        write_rows(Path(out) / "landscape.csv", LANDSCAPE_HEADER, alignlab.landscape_rows(a, b, grid))
    r = resolution
    worst = 0.0
    for i in range(r):
        for j in range(r):
            p, q = grid[i][j], grid[r - 1 - i][r - 1 - j]
            se = math.hypot(p.stderr, q.stderr)
            if se > 0:
                worst = max(worst, abs(p.mean - q.mean) / se)
    # Under the null, 3 sigma is exceeded by a few of the ~r^2/2 pairs; report the fraction.
    frac = np.mean([abs(grid[i][j].mean - grid[r - 1 - i][r - 1 - j].mean)
                    <= 3 * math.hypot(grid[i][j].stderr, grid[r - 1 - i][r - 1 - j].stderr) + 1e-15
                    for i in range(r) for j in range(r)])
    c = r // 2
    along = grid[-1][c].mean
    across = grid[c][-1].mean
    return [
        Check("landscape symmetry (fraction of mirrored pairs within 3 se)", float(frac), 0.99, frac >= 0.99,
              f"max deviation {worst:.2f} se"),
        Check("landscape value along g", along, 0.9, along >= 0.9, "mu=(2,0)"),
        Check("landscape value across g", across, 0.1, across <= 0.1, "mu=(0,2)"),
    ]


DYNAMICS_DELTA = 0.25


def suite_dynamics(seed: int = 0, d: int = 16, n: int = 10_000, steps: int = 50) -> list[Check]:
    """Theoretical-schedule mu dynamics from cos(beta0) = 1/2 and from the mu = 0 saddle."""
    rng = make_rng(seed, 0)
    g = random_unit(d, rng)
    rep = alignlab.dynamics_check(g, cos_beta0=0.5, horizon=steps + 1, n=n, delta=DYNAMICS_DELTA, rng=rng)
    final = rep.estimates[-1]
    floor_gap = (final.mean - (rep.floor_value - 3 * final.stderr))
    saddle = alignlab.dynamics_check(g, mu0=np.zeros(d), horizon=steps + 1, n=n, rng=rng)
    pooled = float(np.mean(saddle.means))
    pooled_se = float(np.sqrt(np.sum(saddle.stderrs ** 2))) / len(saddle.estimates)
    z_pooled = abs(pooled - 1 / d) / pooled_se
    z_max = float(np.max(np.abs(saddle.means - 1 / d) / saddle.stderrs))
    return [
        Check("dynamics monotone_fraction", rep.monotone_fraction, 0.95, rep.monotone_fraction >= 0.95,
              f"E[C] {rep.means[0]:.4f} -> {final.mean:.4f}"),
        Check("dynamics terminal value vs alignment floor", final.mean, rep.floor_value - 3 * final.stderr,
              floor_gap >= 0, f"floor={rep.floor_value:.4f} stderr={final.stderr:.2g}"),
        Check("dynamics saddle mu0=0 pooled |mean-1/d|/se", z_pooled, 3.0, z_pooled <= 3.0,
              f"max per-step deviation {z_max:.2f} se"),
    ]


def suite_unbiasedness(seed: int = 0, d: int = 8, epsilon: float = 0.3, K: int = 5,
                       estimates: int = 100_000, n_fd: int = 1_000_000, coords: int = 3) -> list[Check]:
    """Mean-baseline REINFORCE average against a paired finite difference of E[C]."""
    rng = make_rng(seed, 0)
    g = random_unit(d, rng)
    mu = random_unit(d, rng)
    policy = SamplingPolicy(mu, epsilon)
    idx = np.sort(rng.choice(d, size=coords, replace=False))
    samples = np.empty((estimates, coords))
    batch = 10_000
    for s in range(0, estimates, batch):
        m = min(batch, estimates - s)
        V = mu + epsilon * rng.standard_normal((m, K, d))
        C = alignments(V.reshape(-1, d), g).reshape(m, K)
        adv = C - C.mean(axis=1, keepdims=True)
        samples[s:s + m] = np.einsum("mk,mkd->md", adv, (V - mu) / epsilon**2)[:, idx] / K
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(estimates)
    # Same estimator on one batch through the library path, as a consistency check.
    V = mu + epsilon * rng.standard_normal((K, d))
    lib = reinforce_mu_grad_mean(policy, V, alignments(V, g)).g_mu
    adv = alignments(V, g) - alignments(V, g).mean()
    assert np.allclose(lib, (adv[:, None] * (V - mu)).sum(axis=0) / (K * epsilon**2))
    fd, fd_se = alignlab.fd_alignment_gradient(mu, epsilon, g, rng.standard_normal((n_fd, d)), 1e-3 * epsilon,
                                               coords=idx)
    checks = []
    for c, m, s, f, fs in zip(idx, mean, se, fd, fd_se):
        z = abs(m - f) / math.hypot(s, fs)
        # The self-inclusive mean baseline scales the expectation by (K-1)/K; report the corrected gap too.
        zr = abs(m * K / (K - 1) - f) / math.hypot(s * K / (K - 1), fs)
        checks.append(Check(f"unbiasedness coord {c}", z, 5.0, z <= 5.0,
                            f"reinforce={m:.5f} fd={f:.5f} rescaled_z={zr:.2f}"))
    return checks


SUITES = {
    "alignment_1_over_d": suite_alignment_1_over_d,
    "hessian_bound": suite_hessian_bound,
    "landscape": suite_landscape,
    "dynamics": suite_dynamics,
    "unbiasedness": suite_unbiasedness,
}


def verify(name: str, seed: int = 0, out: str | Path | None = None) -> list[Check]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    if name == "landscape":
        return suite_landscape(seed=seed, out=out)
    return SUITES[name](seed=seed)


# ---------------------------------------------------------------- CLI

def _out_dir(args) -> Path:
    return Path(os.environ.get("ZOLDSD_OUT") or args.out or DEFAULT_OUT)


def _seeds(text: str | None) -> list[int] | None:
    if not text:
        return None
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"seeds: cannot parse {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zoldsd", description="Learnable direction sampling for zeroth-order optimization.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one config and write its trace CSV")
    r.add_argument("--config", required=True)
    r.add_argument("--out")
    r.add_argument("--seeds", help="comma-separated seeds overriding the config seed")

    c = sub.add_parser("compare", help="budget-matched comparison of several configs")
    c.add_argument("--config", action="append", required=True)
    c.add_argument("--out")
    c.add_argument("--seeds", help="comma-separated seed list (default: the shared config seed)")
    c.add_argument("--workers", type=int, default=1)

    v = sub.add_parser("verify", help="run a numerical property suite")
    v.add_argument("suite", choices=sorted(SUITES))
    v.add_argument("--out")
    v.add_argument("--seed", type=int, default=0)

    ls = sub.add_parser("landscape", help="write the d=2 expected-alignment grid")
    ls.add_argument("--out")
    ls.add_argument("--seed", type=int, default=0)
    ls.add_argument("--epsilon", type=float, default=0.5)
    ls.add_argument("--resolution", type=int, default=21)
    ls.add_argument("--n", type=int, default=4000)
    ls.add_argument("--range", type=float, default=2.0, help="grid covers [-range, range]^2")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            for s in _seeds(args.seeds) or [cfg.seed]:
                print(run_to_file(cfg.with_seed(s), _out_dir(args)))
            return 0
        if args.command == "compare":
            cfgs = [load_config(p) for p in args.config]
            seeds = _seeds(args.seeds)
            if seeds is None:
                if len({c.seed for c in cfgs}) != 1:
                    raise ConfigError("seed: configs disagree on the seed; pass --seeds")
                seeds = [cfgs[0].seed]
            labels = [Path(p).stem for p in args.config]
            rows = compare(cfgs, labels, seeds, args.workers, _out_dir(args))
            w = csv.writer(sys.stdout, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            w.writerows(rows)
            return 0
        if args.command == "verify":
            checks = verify(args.suite, args.seed, _out_dir(args))
            for ch in checks:
                print(ch.line())
            return 0 if all(ch.passed for ch in checks) else 1
        if args.command == "landscape":
            a, b, grid = alignlab.landscape_grid(np.array([1.0, 0.0]), args.epsilon, (-args.range, args.range),
                                                 (-args.range, args.range), args.resolution, args.n,
                                                 make_rng(args.seed, 0))
            print(write_rows(_out_dir(args) / "landscape.csv", LANDSCAPE_HEADER, alignlab.landscape_rows(a, b, grid)))
            return 0
    except (ConfigError, ValueError, OSError, ArithmeticError) as exc:
        print(f"zoldsd: error: {exc}", file=sys.stderr)
        return 2
    return 2
