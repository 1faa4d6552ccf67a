# bffg/main.py
"""Command line front end.

    python -m bffg.main likelihood --model model.json --n 1000 --seed 1
    python -m bffg.main mcmc --model model.json --iters 5000 --lambda 0.9 --out trace.csv

Every CSV starts with a ``# bffg-schema-version: 1`` line followed by a
header row; fields are written by pandas with minimal quoting, so only
fields holding commas or quotes (vector states, potential parameters) are
quoted. Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

import numpy as np
import pandas as pd

from bffg.config import DB_URL, LOG_LEVEL
from bffg.db.repository import save_trace
from bffg.engine.likelihood import estimate_likelihood
from bffg.engine.passes import run_backward, run_forward
from bffg.errors import ModelValidationError, NumericalError
from bffg.graph.template import parse_theta
from bffg.inference.mcmc import SCHEMA_LINE, ChainSettings, run_chain
from bffg.schemas.generator import finite_tree_model, tanh_tree_model
from bffg.schemas.model_file import load_model_file, write_model_file

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _cell(value) -> str:
    return json.dumps(_jsonable(value), separators=(',', ':'))


def write_csv(frame: pd.DataFrame, out: Optional[str], index: bool = False) -> None:
    handle = open(out, 'w', newline='') if out else sys.stdout
    try:
        handle.write(SCHEMA_LINE + '\n')
        frame.to_csv(handle, index=index, float_format='%.10g')
    finally:
        if out:
            handle.close()


def _load(args):
    template = load_model_file(args.model).template()
    theta = parse_theta(args.theta, template)
    return template, theta


# ============================================
# COMMANDS
# ============================================

def cmd_filter(args) -> int:
    template, theta = _load(args)
    bp = run_backward(template, theta)
    model = bp.model
    rows = []
    for v in model.backward_order():
        edge = model.in_edge(v)
        for parent in edge.parents:
            g = bp.message(v, parent)
            rows.append({
                'target': v,
                'parent': parent,
                'family': edge.kernel.family,
                'potential': type(g).__name__,
                'parameters': _cell(g.describe()),
            })
    rows.append({'target': model.root, 'parent': -1, 'family': 'root',
                 'potential': type(bp.root_potential).__name__,
                 'parameters': _cell({'log_g_root': bp.log_root_value})})
    write_csv(pd.DataFrame(rows), args.out)
    logger.info(f"filtered {len(model.edges)} edges, log g_r(x_r) = {bp.log_root_value:.10g}")
    return EXIT_OK


def cmd_guide(args) -> int:
    template, theta = _load(args)
    bp = run_backward(template, theta)
    model = bp.model
    rng = np.random.default_rng(args.seed)
    hidden = [v for v in model.forward_order() if not model.is_leaf(v)]
    rows = []
    for i in range(args.n):
        trajectory, ledger = run_forward(model, bp, rng)
        row = {'sample': i, 'log_weight': ledger.total}
        for v in sorted(ledger.entries):
            row[f'w_{v}'] = ledger.entries[v]
        for v in hidden:
            row[f'x_{v}'] = _cell(trajectory.states[v])
        rows.append(row)
    write_csv(pd.DataFrame(rows), args.out)
    logger.info(f"drew {args.n} guided samples")
    return EXIT_OK


def cmd_likelihood(args) -> int:
    template, theta = _load(args)
    estimate = estimate_likelihood(template, theta, n_samples=args.n, rng=args.seed)
    print(f"log_likelihood {estimate.log_mean:.10g} +- {estimate.log_se:.3g}")
    if estimate.degenerate:
        print("degenerate: every sample has zero weight")
    if args.out:
        frame = pd.DataFrame([{
            'log_likelihood': estimate.log_mean,
            'log_se': estimate.log_se,
            'n': estimate.n_samples,
            'ess': estimate.effective_sample_size,
            'degenerate': int(estimate.degenerate),
        }])
        write_csv(frame, args.out)
    return EXIT_OK


def cmd_mcmc(args) -> int:
    model_file = load_model_file(args.model)
    template = model_file.template()
    settings = ChainSettings(
        iterations=args.iters,
        lam=args.lam,
        burnin=args.burnin,
        theta=parse_theta(args.theta, template),
        obs_variance=args.obs_variance,
        record_edges=args.record_edges,
    )
    trace = run_chain(template, settings, args.seed)
    if args.out:
        trace.to_csv(args.out)
    else:
        write_csv(trace.frame(), None, index=True)
    logger.info(f"path acceptance rate {trace.acceptance_rate():.3f} after burn-in {args.burnin}")
    db_url = args.db or DB_URL
    if db_url:
        save_trace(trace, model_file.name, seed=args.seed, url=db_url)
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.kind == 'tanh':
        model_file = tanh_tree_model(levels=args.levels, branching=args.branching, seed=args.seed)
    else:
        model_file = finite_tree_model(n_vertices=args.vertices, n_states=args.states, seed=args.seed,
                                       perturb=args.perturb)
    if not args.out:
        raise ModelValidationError("generate needs --out")
    write_model_file(model_file, args.out)
    logger.info(f"wrote {model_file.name} to {args.out}")
    return EXIT_OK


# ============================================
# ENTRY POINT
# ============================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='bffg', description="Backward filtering forward guiding")
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p, samples: bool = False):
        p.add_argument('--model', required=True, help="JSON model file")
        p.add_argument('--theta', help="free parameters, '1,0.5' or 'name=value,...'")
        p.add_argument('--seed', type=int, default=0)
        p.add_argument('--out', help="output CSV (stdout if omitted)")
        if samples:
            p.add_argument('--n', type=int, default=1000, help="number of guided samples")

    common(sub.add_parser('filter', help="run the backward filter"))
    common(sub.add_parser('guide', help="draw guided trajectories"), samples=True)
    common(sub.add_parser('likelihood', help="estimate the likelihood"), samples=True)

    mcmc = sub.add_parser('mcmc', help="sample parameters and paths")
    common(mcmc)
    mcmc.add_argument('--iters', type=int, default=1000)
    mcmc.add_argument('--burnin', type=int, default=0)
    mcmc.add_argument('--lambda', dest='lam', type=float, default=0.9, help="pCN memory in [0, 1)")
    mcmc.add_argument('--obs-variance', help="free parameter updated by its inverse-gamma full conditional")
    mcmc.add_argument('--record-edges', action='store_true', help="add per-edge log-weight columns")
    mcmc.add_argument('--db', help="SQLAlchemy URL for storing the trace (default BFFG_DB_URL)")

    gen = sub.add_parser('generate', help="write a synthetic model file")
    gen.add_argument('kind', choices=['tanh', 'finite'])
    gen.add_argument('--seed', type=int, default=0)
    gen.add_argument('--out')
    gen.add_argument('--levels', type=int, default=3)
    gen.add_argument('--branching', type=int, default=3)
    gen.add_argument('--vertices', type=int, default=6)
    gen.add_argument('--states', type=int, default=3)
    gen.add_argument('--perturb', type=float, default=0.0)
    return parser


COMMANDS = {
    'filter': cmd_filter,
    'guide': cmd_guide,
    'likelihood': cmd_likelihood,
    'mcmc': cmd_mcmc,
    'generate': cmd_generate,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ModelValidationError as e:
        logger.error(f"invalid input: {e}")
        return EXIT_INVALID
    except NumericalError as e:
        logger.error(f"numerical failure: {e}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    logging.basicConfig(
        level=LOG_LEVEL,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    sys.exit(main())
