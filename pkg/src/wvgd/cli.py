"""Command-line entry point.

    wvgd run --config FILE [--seed S] [--out DIR]
    wvgd validate

Exit codes: 0 success, 1 at least one failed trial or check, 2 bad config.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources

import numpy as np

from .experiments import ConfigError, ExperimentConfig, run_experiment, with_overrides

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def default_config_path(name):
    """Path of a bundled default config (mixture_compare, logreg_pelbo or gp_partition)."""
    return resources.files("wvgd") / "configs" / f"{name}.json"


def _check(name, ok, detail):
    return {"check": name, "passed": bool(ok), "detail": detail}


def validation_checks():
    """Fast oracle checks of the core estimators against quadrature and closed forms."""
    from . import oracle
    from .core import RngStream
    from .dynamics import estimate_gradient, init_state
    from .targets import ConjugateGaussianTarget, sample_random_mixture, standard_normal_target
    from .tessellation import Tessellation, estimate_weights
    from .varfit import VariationalComponent, entropy_gradient, pelbo

    out = []
    rng = RngStream(12345)

    tg = standard_normal_target()
    quad = oracle.default_quadrature(tg)
    st = init_state(np.array([[0.0], [2.0]]), samples_per_step=4000)
    g = estimate_gradient(st, tg, rng=rng.spawn(0))
    zs = np.array([0.0, 2.0])
    ref = oracle.cell_cost_gradient(zs, tg.density, quad) / oracle.cell_masses(zs, tg.density, quad)
    err = np.abs(g.per_particle_grads[:, 0] - ref)
    tol = np.maximum(1e-3, 3 * g.per_particle_se[:, 0])
    out.append(_check("particle gradient vs quadrature", np.all(err <= tol), f"err={err.round(4).tolist()}"))

    ll = oracle.lloyd_1d(tg.density, 2, quad, n_starts=2)
    out.append(_check("two-point quantizer of N(0,1)", abs(ll.positions[1] - np.sqrt(2 / np.pi)) < 1e-4,
                      f"z={ll.positions.round(5).tolist()}"))

    mix = sample_random_mixture(rng.spawn(1))
    z = np.sort(mix.mean + np.array([-1.0, 0.0, 1.0]))
    t = Tessellation.from_particles(z[:, None])
    comps = [VariationalComponent.at_particle([zj], j, 0.0) for j, zj in enumerate(z)]
    w = estimate_weights(t, mix, comps, 4000, rng.spawn(2))
    ref = oracle.cell_masses(z, mix.density, oracle.default_quadrature(mix))
    ok = np.all(np.abs(w.weights - ref) <= 3 * w.std_errors + 1e-12)
    out.append(_check("cell weights vs quadrature", ok, f"beta={w.weights.round(4).tolist()} ref={ref.round(4).tolist()}"))

    t = Tessellation.from_particles(np.array([[-1.0], [0.0]]))
    c = VariationalComponent(np.array([0.3]), np.array([-0.2]), 1)
    ge = entropy_gradient(c, t, 20000, rng.spawn(3))
    h = 1e-4
    fd = [(oracle.truncated_moments_entropy(0.3 + h, np.exp(-0.2), (-0.5, np.inf)).entropy
           - oracle.truncated_moments_entropy(0.3 - h, np.exp(-0.2), (-0.5, np.inf)).entropy) / (2 * h)]
    ok = abs(ge.mean[0] - fd[0]) <= max(1e-3, 3 * ge.se_mean[0])
    out.append(_check("entropy gradient on a half-line", ok, f"mc={ge.mean[0]:.4f} fd={fd[0]:.4f}"))

    cg = ConjugateGaussianTarget()
    post = cg.posterior
    st = init_state(np.array([[post[0]]]))
    st = st.__class__(st.ensemble, (VariationalComponent(np.array([post[0]]), np.array([np.log(post[1])]), 0),))
    t = Tessellation(st.ensemble)
    p = pelbo(st, t, cg, np.ones(1), 4000, rng.spawn(4))
    logz = oracle.conjugate_evidence(cg.prior_std, cg.noise_std, cg.observation)
    out.append(_check("PELBO below log evidence", p.value <= logz + 3 * p.std_error + 1e-9,
                      f"pelbo={p.value:.4f} log_evidence={logz:.4f}"))
    return out


def cmd_validate(args):
    checks = validation_checks()
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['check']}: {c['detail']}")
    return EXIT_OK if all(c["passed"] for c in checks) else EXIT_FAILED


def cmd_run(args):
    try:
        cfg = ExperimentConfig.from_file(args.config)
        cfg = with_overrides(cfg, args.seed, args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        from pathlib import Path

        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"config error: output_dir not writable: {e}", file=sys.stderr)
        return EXIT_CONFIG

    def progress(*a):
        if args.verbose:
            print(*a[:-1], flush=True)

    result = run_experiment(cfg, write=True, progress=progress)
    print(json.dumps({"config_hash": cfg.hash(), "rows": len(result.rows), "failed": result.n_failed, **result.paths}))
    return EXIT_FAILED if result.n_failed else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="wvgd", description="Particle variational inference experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="run the fast oracle checks")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
