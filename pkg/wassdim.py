#!/usr/bin/env python3
"""
wassdim command-line entry point
Covers, intrinsic dimensions, transport and Hölder distances, ReLU network
constructions and convergence-rate experiments, all emitting JSON
"""
import argparse
import json
import logging
import sys
from typing import Dict, List, Optional

import numpy as np

import dimension
import holder
import relunet
from geometry import as_metric, covering_profile
from measures import describe, make_discrete, parse_measure, sample
from rates import RATES_CONFIG, compare_to_theory, resolve_dstar, run_rate_experiment, save_report
from transport import REFERENCE_MODES, empirical_w1, w1_exact, w1_sorted_quantile
from utils import (SCHEMA_VERSION, ValidationError, WassdimError, dump_json, load_point_cloud_csv, parse_int_list,
                   parse_int_range, parse_number, parse_scale_grid, resolve_threads, save_json)

logger = logging.getLogger("wassdim")

EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_INTERNAL = 4

FORMATS_HELP = """
file formats:
  point clouds  CSV, one point per row, d numeric columns, no header
                (pass --header when the first row holds column names)
  weights       CSV with one column, one weight per point of the matching file
  networks      JSON {"layers": [{"w": [[...]], "b": [...], "act": "relu"|"id"}]};
                large layers use "w_sparse": {"shape", "rows", "cols", "vals"}
  reports       JSON with "schema": "wassdim/1" and a "config" echo; the rate
                command also writes <out>.csv with columns n, trial, value, reference

measures:
  uniform:d=2  geomlattice:d=1  reciplattice:d=2  cantor:alpha=0.3333,cantor=1,unif=2
  cantor:dim=2.5  atoms:file=a.csv[,weights=w.csv]  pushforward:gen=parabola
"""


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_measure_file(path: str, weights_path: Optional[str], header: bool):
    points = load_point_cloud_csv(path, header=header)
    weights = None
    if weights_path:
        weights = load_point_cloud_csv(weights_path, header=header).ravel()
    return make_discrete(points, weights)


def resolve_points(args) -> np.ndarray:
    if args.points:
        return load_point_cloud_csv(args.points, header=args.header)
    if not args.measure:
        raise ValidationError("pass --points or --measure")
    return sample(parse_measure(args.measure), args.n, seed=args.seed)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_cover(args) -> Dict:
    points = resolve_points(args)
    eps_grid = parse_scale_grid(args.eps)
    rows = covering_profile(points, eps_grid, method=args.method, metric=args.metric, threads=args.threads)
    return {'points': int(points.shape[0]), 'dim': int(points.shape[1]), 'profile': rows}


def cmd_dim(args) -> Dict:
    eps_grid = parse_scale_grid(args.eps) if args.eps else None
    if args.points:
        estimate = dimension.minkowski_dim_estimate(load_point_cloud_csv(args.points, header=args.header),
                                                    eps_grid, threads=args.threads)
        return {'estimate': estimate.to_dict()}
    if not args.measure:
        raise ValidationError("pass --points or --measure")
    spec = parse_measure(args.measure)
    common = dict(budget=args.budget, seed=args.seed, threads=args.threads)
    if args.kind == "all":
        profile = dimension.dimension_profile(spec, args.alpha, eps_grid, metric=args.metric, **common)
        return {'measure': describe(spec), 'profile': profile}
    if args.kind == "entropic":
        estimate = dimension.entropic_dim_estimate(spec, args.alpha, eps_grid, metric=args.metric, **common)
    elif args.kind == "wupper":
        estimate = dimension.wasserstein_upper_dim_estimate(spec, args.alpha, eps_grid, metric=args.metric,
                                                            **common)
    elif args.kind == "wlower":
        estimate = dimension.lower_wasserstein_dim_estimate(spec, eps_grid=eps_grid, metric=args.metric,
                                                            **common)
    else:
        estimate = dimension.support_minkowski_estimate(spec, eps_grid, **common)
    return {'measure': describe(spec), 'estimate': estimate.to_dict(),
            'oracle': dimension.oracle_dims(spec, args.alpha)}


def cmd_w1(args) -> Dict:
    P = load_measure_file(args.p, args.p_weights, args.header)
    Q = load_measure_file(args.q, args.q_weights, args.header)
    if P.dim == 1 and Q.dim == 1:
        return {'value': w1_sorted_quantile(P, Q), 'method': "quantile"}
    value, coupling = w1_exact(P, Q, args.metric)
    out = {'value': value, 'method': "network_simplex"}
    if args.coupling:
        out['coupling'] = coupling.to_dict()
    return out


def cmd_empw1(args) -> Dict:
    spec = parse_measure(args.measure)
    result = empirical_w1(spec, args.n, ref_size=args.ref, trials=args.trials, seed=args.seed,
                          metric=args.metric, reference=args.reference, threads=args.threads)
    return {'measure': describe(spec), 'result': result.to_dict()}


def cmd_ipm(args) -> Dict:
    P = load_measure_file(args.p, args.p_weights, args.header)
    Q = load_measure_file(args.q, args.q_weights, args.header)
    hs = holder.HolderSpec(args.beta, args.C, P.dim)
    if args.eps is None:
        lp = holder.holder_ipm_lp(P, Q, hs)
        return {'value': lp['value'], 'method': lp['method'], 'support': int(lp['atoms'].shape[0])}
    estimate = holder.ipm_cover_estimate(P, Q, hs, parse_number(args.eps))
    return {'estimate': estimate.to_dict()}


def cmd_vg(args) -> Dict:
    code = holder.vg_code(args.m, seed=args.seed)
    return {'codewords': code.tolist(), 'checks': holder.check_vg_code(code, args.m)}


def cmd_dyadic(args) -> Dict:
    spec = parse_measure(args.measure)
    levels = parse_int_range(args.levels)
    h = holder.dyadic_hierarchy(spec, levels, beta=args.beta, dprime=args.dprime, threads=args.threads)
    defects = [holder.mass_defect_trials(h, spec, r, args.n, args.trials, seed=args.seed, threads=args.threads)
               for r in range(levels[0], levels[1] + 1)]
    bound = holder.hierarchy_rate_bound(h, args.n, holder.HolderSpec(args.beta, args.C, spec.dim))
    return {'measure': describe(spec), 'hierarchy': h.to_dict(), 'mass_defect': defects,
            'rate_bound': bound}


def cmd_net(args) -> Dict:
    report: Dict = {'mode': args.mode}
    if args.mode == "sq":
        net = relunet.build_sq(args.m)
    elif args.mode == "prod2":
        net = relunet.build_prod2(args.m, args.M)
    elif args.mode == "prodd":
        net = relunet.build_prodd(args.m, args.d)
    elif args.mode == "xi":
        net = relunet.build_bump_xi(args.a, args.b)
    elif args.mode == "taylor":
        spec = parse_measure(args.measure or "uniform:d=2")
        func = holder.parse_function(args.func, spec.dim)
        hs = holder.HolderSpec(args.alpha, args.C, spec.dim)
        approx = relunet.build_taylor_approximator(func, hs, parse_number(args.eps), spec, p=args.p,
                                                   allow_finite_differences=args.allow_fd)
        net = approx.net
        report['approximation'] = approx.to_dict()
    else:
        latent = parse_measure(args.measure) if args.measure else parse_measure(f"uniform:d={args.latent_dim}")
        G = relunet.parse_generator(args.gen, latent.dim)
        approx = relunet.build_pushforward_generator(G, args.alpha, args.C, parse_number(args.eps), latent,
                                                     allow_finite_differences=args.allow_fd)
        net = approx.net
        report['approximation'] = approx.to_dict()
        report['w1_gap'] = relunet.generator_w1_gap(approx, G, latent, args.n, seed=args.seed)
    report['stats'] = net.stats().to_dict()
    if args.out:
        relunet.save_network(args.out, net)
    if args.report:
        save_json(args.report, finish(report, args))
    return report


def cmd_rate(args) -> Dict:
    spec = parse_measure(args.measure)
    report = run_rate_experiment(spec, parse_int_list(args.ns), trials=args.trials, seed=args.seed,
                                 metric=args.metric, ref_factor=args.ref_factor, reference=args.reference,
                                 ground_metric=args.ground_metric, beta=args.beta, C=args.C, n0=args.n0,
                                 threads=args.threads)
    beta = args.beta if args.beta is not None else RATES_CONFIG['holder_beta']
    dstar = resolve_dstar(spec, beta, args.dstar)
    compare_to_theory(report, dstar, beta, args.tolerance)
    if args.out:
        save_report(args.out, report)
    out = report.to_dict()
    out['experiment'] = out.pop('config')
    return out


COMMANDS = {
    'cover': cmd_cover,
    'dim': cmd_dim,
    'w1': cmd_w1,
    'empw1': cmd_empw1,
    'ipm': cmd_ipm,
    'vg': cmd_vg,
    'dyadic': cmd_dyadic,
    'net': cmd_net,
    'rate': cmd_rate,
}

# Flags that name output locations or logging are left out of the echo
NON_CONFIG_FLAGS = ('out', 'report', 'verbose', 'threads')


def resolved_config(args) -> Dict:
    return {k: getattr(v, 'value', v) for k, v in sorted(vars(args).items()) if k not in NON_CONFIG_FLAGS}


def finish(payload: Dict, args) -> Dict:
    out = dict(payload)
    out['schema'] = SCHEMA_VERSION
    out['config'] = resolved_config(args)
    return out


# ---------------------------------------------------------------------------
# Parser


def add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument('--seed', type=int, default=0, help='random seed (default 0)')
    p.add_argument('--threads', type=int, default=None, help='worker threads (default WASSDIM_THREADS or 1)')
    p.add_argument('--out', default=None, help='also write the JSON result here')
    p.add_argument('--verbose', action='store_true', help='log progress to stderr')
    p.add_argument('--header', action='store_true', help='CSV inputs carry a header row')


def add_metric(p: argparse.ArgumentParser, dest: str = 'metric') -> None:
    p.add_argument('--metric' if dest == 'metric' else '--ground-metric', dest=dest, type=as_metric,
                   default=as_metric('linf'), help='ground metric: linf or l2')


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='wassdim', description=__doc__,
                            formatter_class=argparse.RawDescriptionHelpFormatter, epilog=FORMATS_HELP)
    sub = parser.add_subparsers(dest='command', required=True, parser_class=ArgumentParser)

    p = sub.add_parser('cover', help='covering numbers across scales')
    p.add_argument('--points', help='point cloud CSV')
    p.add_argument('--measure', help='measure to sample when no points are given')
    p.add_argument('--n', type=int, default=1000)
    p.add_argument('--eps', default='2^-1..2^-6')
    p.add_argument('--method', choices=['grid', 'greedy', 'packing'], default='grid')
    add_metric(p)
    add_common(p)

    p = sub.add_parser('dim', help='dimension estimates')
    p.add_argument('--measure')
    p.add_argument('--points', help='Minkowski estimate of a point cloud')
    p.add_argument('--alpha', type=float, default=1.0)
    p.add_argument('--kind', choices=['entropic', 'wupper', 'wlower', 'minkowski', 'all'], default='entropic')
    p.add_argument('--eps', default=None)
    p.add_argument('--budget', type=int, default=None, help='sample budget for continuous measures')
    add_metric(p)
    add_common(p)

    p = sub.add_parser('w1', help='exact W1 between two point files')
    p.add_argument('--p', required=True)
    p.add_argument('--q', required=True)
    p.add_argument('--p-weights', default=None)
    p.add_argument('--q-weights', default=None)
    p.add_argument('--coupling', action='store_true', help='include the optimal coupling')
    add_metric(p)
    add_common(p)

    p = sub.add_parser('empw1', help='Monte-Carlo W1 between an empirical measure and its source')
    p.add_argument('--measure', required=True)
    p.add_argument('--n', type=int, required=True)
    p.add_argument('--ref', type=int, default=None)
    p.add_argument('--trials', type=int, default=20)
    p.add_argument('--reference', choices=REFERENCE_MODES, default='auto')
    add_metric(p)
    add_common(p)

    p = sub.add_parser('ipm', help='Hölder IPM between two point files')
    p.add_argument('--p', required=True)
    p.add_argument('--q', required=True)
    p.add_argument('--p-weights', default=None)
    p.add_argument('--q-weights', default=None)
    p.add_argument('--beta', type=float, default=1.0)
    p.add_argument('--C', type=float, default=1.0)
    p.add_argument('--eps', default=None, help='cover scale; omit for the plain program value')
    add_common(p)

    p = sub.add_parser('vg', help='Varshamov-Gilbert code')
    p.add_argument('--m', type=int, required=True)
    add_common(p)

    p = sub.add_parser('dyadic', help='multilevel cells and mass defects')
    p.add_argument('--measure', required=True)
    p.add_argument('--levels', default='2..4')
    p.add_argument('--n', type=int, default=10000)
    p.add_argument('--trials', type=int, default=10)
    p.add_argument('--beta', type=float, default=1.0)
    p.add_argument('--C', type=float, default=1.0)
    p.add_argument('--dprime', type=float, default=None)
    add_common(p)

    p = sub.add_parser('net', help='ReLU network constructions')
    p.add_argument('mode', choices=['sq', 'prod2', 'prodd', 'xi', 'taylor', 'pushforward'])
    p.add_argument('--m', type=int, default=8)
    p.add_argument('--M', type=float, default=1.0)
    p.add_argument('--d', type=int, default=2)
    p.add_argument('--a', type=float, default=2.0)
    p.add_argument('--b', type=float, default=1.0)
    p.add_argument('--func', default='builtin:xy')
    p.add_argument('--gen', default='builtin:parabola')
    p.add_argument('--latent-dim', type=int, default=1)
    p.add_argument('--measure', default=None)
    p.add_argument('--alpha', type=float, default=2.0)
    p.add_argument('--C', type=float, default=1.0)
    p.add_argument('--eps', default='2^-4')
    p.add_argument('--p', type=float, default=1.0, help='L_p exponent of the error check')
    p.add_argument('--n', type=int, default=500, help='latent draws for the pushforward W1 gap')
    p.add_argument('--allow-fd', action='store_true', help='finite differences when no derivative oracle')
    p.add_argument('--report', default=None, help='write the stats report here')
    add_common(p)

    p = sub.add_parser('rate', help='convergence-rate experiment')
    p.add_argument('--measure', required=True)
    p.add_argument('--metric', choices=['w1', 'holder_ipm'], default='w1')
    p.add_argument('--ns', default='128,256,...,8192')
    p.add_argument('--trials', type=int, default=20)
    p.add_argument('--ref-factor', type=int, default=RATES_CONFIG['ref_factor'])
    p.add_argument('--reference', choices=REFERENCE_MODES, default='auto')
    p.add_argument('--dstar', default='auto')
    p.add_argument('--beta', type=float, default=None)
    p.add_argument('--C', type=float, default=None)
    p.add_argument('--n0', type=int, default=RATES_CONFIG['n0'])
    p.add_argument('--tolerance', type=float, default=RATES_CONFIG['tolerance'])
    add_metric(p, dest='ground_metric')
    add_common(p)
    return parser


def emit_error(exc: BaseException, code: int) -> int:
    payload = {'schema': SCHEMA_VERSION, 'error': type(exc).__name__, 'message': str(exc), 'exit_code': code}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except (UsageError, WassdimError) as e:
        return emit_error(e, EXIT_USAGE)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(asctime)s %(name)s %(levelname)s %(message)s', stream=sys.stderr)
    try:
        args.threads = resolve_threads(args.threads)
        payload = finish(COMMANDS[args.command](args), args)
        text = dump_json(payload)
        if args.out and args.command not in ('net', 'rate'):
            save_json(args.out, payload)
    except WassdimError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return emit_error(e, EXIT_VALIDATION)
    except Exception as e:
        logger.exception(f"{args.command} crashed")
        return emit_error(e, EXIT_INTERNAL)

    sys.stdout.write(text + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
