"""``u2k`` command line: gen-data, pretrain, adapt, fuse, eval, sweep, ablate.

Every command reads a ``--config`` file and writes under the output
directory. Failures print one ``error code=N kind=K message="..."`` line on
stderr and exit with 2 (config), 3 (divergence) or 4 (I/O).
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import metrics, serialize
from . import tensor as T
from .config import ConfigError, load_config
from .data import CubeFormatError, HsiCube, write_cube
from .degradation import Psf, Srf, write_psf, write_srf
from .experiment import (
    LOSS_VARIANTS,
    OPT_VARIANTS,
    bilinear_psnr,
    build_net,
    generate_data,
    load_dataset,
    load_net,
    log,
    observe,
    per_image_reports,
    pretrain_config,
    run_variant,
    staged,
    u2k_config,
    write_ppm,
    write_table,
)
from .fusion import fuse, pretrain, write_loss_curve
from .optim import DivergenceError
from .serialize import SnapshotError
from .u2k import DtModule, gao_train, u2k_infer, write_adapt_curve

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


class Run:
    """Resolved configuration, seed and output directory for one command."""

    def __init__(self, args):
        self.args = args
        self.cfg = load_config(args.config)
        self.seed = self.cfg.run.seed if args.seed is None else args.seed
        self.out = args.out or self.cfg.resolve(self.cfg.run.out)
        os.makedirs(self.out, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out, name)

    def require(self, name, hint):
        p = self.path(name)
        if not os.path.exists(p):
            raise FileNotFoundError(f"{p} missing; {hint}")
        return p

    def dataset(self):
        return load_dataset(self.cfg, self.out)

    def net(self):
        return load_net(self.cfg, self.require("fusion.u2kw", "run pretrain first"), self.seed)

    def test_pair(self, test, spec=None):
        return observe(test, spec or self.cfg.unknown_spec(), self.seed)

    def adapt(self, net, train, X, Y, manifest, seed=None, strategy=None, drop=None):
        ucfg = u2k_config(self.cfg, manifest, self.seed if seed is None else seed, strategy or self.args.opt, drop)
        return gao_train(net, train, X, Y, ucfg, log=log.info)


def _drop(args):
    return (args.drop,) if args.drop else None


# ------------------------------------------------------------------- commands

def cmd_gen_data(run):
    path = generate_data(run.cfg, run.path("data"), run.seed)
    log.info("wrote %s", path)


def cmd_pretrain(run):
    train, _, manifest = run.dataset()
    net = build_net(run.cfg, run.seed)
    target = run.path("fusion.u2kw")
    with staged(target) as partial:
        curve = pretrain(net, train, pretrain_config(run.cfg, manifest, run.seed), snapshot_path=partial, log=log.info)
        serialize.save(net.state_dict(), partial)
    with staged(run.path("pretrain_loss.csv")) as partial:
        write_loss_curve(curve, partial)


def cmd_adapt(run):
    net = run.net()
    train, test, manifest = run.dataset()
    _, X, Y = run.test_pair(test)
    try:
        result = run.adapt(net, train, X, Y, manifest, drop=_drop(run.args))
    except DivergenceError as exc:
        if getattr(exc, "last_good", None):
            serialize.save(exc.last_good[0], run.path("dw.u2kw.partial"))
            serialize.save(exc.last_good[1], run.path("dt.u2kw.partial"))
        raise
    for name, module in (("dw.u2kw", result.dw), ("dt.u2kw", result.dt)):
        with staged(run.path(name)) as partial:
            serialize.save(module.state_dict(), partial)
    with staged(run.path("adapt_loss.csv")) as partial:
        write_adapt_curve(result.curve, partial)
    with staged(run.path("phi_k.txt")) as partial:
        write_psf(Psf(result.dw.phi_k(), "learned"), partial, comment="learned blur kernel")
    with staged(run.path("phi_r.txt")) as partial:
        write_srf(Srf(result.dw.phi_r()), partial, comment="learned spectral response")


def _load_dt(run):
    dt = DtModule(run.cfg.data.hsi_bands, run.cfg.data.msi_bands)
    dt.load_state_dict(serialize.load(run.require("dt.u2kw", "run adapt first or pass --no-adapt")))
    return dt.astype(T.get_dtype())


def _fused(run, net, X, Y):
    if run.args.no_adapt:
        return "baseline", fuse(net, X, Y)
    return "u2k", u2k_infer(_load_dt(run), net, X, Y)


def cmd_fuse(run):
    net = run.net()
    _, test, _ = run.dataset()
    _, X, Y = run.test_pair(test)
    _, out = _fused(run, net, X, Y)
    folder = run.path("fused")
    os.makedirs(folder, exist_ok=True)
    for cube, z in zip(test, out):
        with staged(os.path.join(folder, f"{cube.name}.hsc")) as partial:
            write_cube(HsiCube(z.astype(np.float32), cube.name), partial)
        with staged(os.path.join(folder, f"{cube.name}.ppm")) as partial:
            write_ppm(z, partial)


def cmd_eval(run):
    net = run.net()
    _, test, _ = run.dataset()
    Z, X, Y = run.test_pair(test)
    method, out = _fused(run, net, X, Y)
    label = f"{run.cfg.unknown.psf}+{run.cfg.unknown.srf}"
    reports = per_image_reports(Z, out, run.cfg.known.scale, method, label, [c.name for c in test])
    with staged(run.path("report.csv")) as partial:
        metrics.write_report(reports, partial)
    log.info("mean psnr %.3f dB over %d cubes", np.mean([r.psnr for r in reports]), len(reports))


def cmd_sweep(run):
    net = run.net()
    train, test, manifest = run.dataset()
    rows, mmn = [], {"baseline": [], "u2k": []}
    for j, (cell, spec) in enumerate(run.cfg.sweep_specs()):
        Z, X, Y = observe(test, spec, run.seed + j)
        log.info("sweep cell %s", cell)
        base = per_image_reports(Z, fuse(net, X, Y), spec.scale, "baseline", cell, [c.name for c in test])
        reports = {"baseline": base}
        if not run.args.no_adapt:
            result = run.adapt(net, train, X, Y, manifest, seed=run.seed + j, drop=_drop(run.args))
            out = u2k_infer(result.dt, net, X, Y)
            reports["u2k"] = per_image_reports(Z, out, spec.scale, "u2k", cell, [c.name for c in test])
        x_psnr = bilinear_psnr(Z, X, spec.scale)
        for method, reps in reports.items():
            mean = metrics.mean_report(reps, method, cell)
            rows.append(mean)
            mmn[method].append((cell, x_psnr, mean.psnr))
    with staged(run.path("sweep.csv")) as partial:
        metrics.write_report(rows, partial)
    table = []
    for method, recs in mmn.items():
        if len(recs) < 2:
            continue
        norm, degenerate = metrics.mmn_psnr_curve([(a, b) for _, a, b in recs])
        if degenerate:
            log.warning("normalized curve for %s is degenerate", method)
        table += [(method, cell, a, b) for (cell, _, _), (a, b) in zip(recs, norm)]
    with staged(run.path("sweep_mmn.csv")) as partial:
        write_table(table, ("method", "degradation", "input_psnr_norm", "output_psnr_norm"), partial)


def _ablation_rows(run, variants, net, train, Z, X, Y, manifest, cache):
    rows = []
    names = [f"img{i}" for i in range(len(Z))]
    for label, strategy, drop in variants:
        psnrs = []
        for k in range(run.cfg.ablate.seeds):
            key = (strategy, drop, k)
            if key not in cache:
                ucfg = u2k_config(run.cfg, manifest, run.seed + k, strategy, drop)
                log.info("ablation %s seed %d", label, run.seed + k)
                cache[key] = metrics.mean_report(run_variant(net, train, Z, X, Y, ucfg, names)[1], label, "")
            r = cache[key]
            psnrs.append(r)
            rows.append((label, run.seed + k, r.rmse, r.psnr, r.ssim, r.sam, r.ergas))
        m = metrics.mean_report(psnrs, label, "")
        rows.append((label, "mean", m.rmse, m.psnr, m.ssim, m.sam, m.ergas))
    return rows


def cmd_ablate(run):
    net = run.net()
    train, test, manifest = run.dataset()
    Z, X, Y = run.test_pair(test)
    header = ("variant", "seed", "rmse", "psnr", "ssim", "sam", "ergas")
    cache = {}
    args = run.args
    if args.drop or not args.opt:
        names = ["full", f"no_{args.drop}"] if args.drop else list(LOSS_VARIANTS)
        variants = [(n, "gao", LOSS_VARIANTS[n]) for n in names]
        rows = _ablation_rows(run, variants, net, train, Z, X, Y, manifest, cache)
        with staged(run.path("ablate_losses.csv")) as partial:
            write_table(rows, header, partial)
    if args.opt or not args.drop:
        opts = [args.opt] + (["gao"] if args.opt != "gao" else []) if args.opt else list(OPT_VARIANTS)
        variants = [(o, o, ()) for o in opts]
        rows = _ablation_rows(run, variants, net, train, Z, X, Y, manifest, cache)
        with staged(run.path("ablate_optim.csv")) as partial:
            write_table(rows, header, partial)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
}


def build_parser():
    p = argparse.ArgumentParser(prog="u2k", description="Blind hyperspectral fusion by unknown-to-known degradation transfer.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--out", help="output directory (default: run.out from the config)")
    p.add_argument("--seed", type=int, help="base seed, overrides run.seed")
    p.add_argument("--no-adapt", action="store_true", help="fuse/eval without DT; sweep without adaptation")
    p.add_argument("--drop", choices=("rec", "dt", "con"), help="leave one loss term out")
    p.add_argument("--opt", choices=OPT_VARIANTS, help="optimization schedule")
    p.add_argument("--precision", choices=("f32", "f64"), help="floating point width")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fail(code, kind, exc):
    msg = " ".join(str(exc).split()).replace('"', "'")
    print(f'error code={code} kind={kind} message="{msg}"', file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        run = Run(args)
        with T.precision(args.precision or run.cfg.run.precision):
            COMMANDS[args.command](run)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except DivergenceError as exc:
        return _fail(EXIT_DIVERGED, "divergence", exc)
    except (OSError, CubeFormatError, SnapshotError) as exc:
        return _fail(EXIT_IO, "io", exc)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
