"""Command-line runner: ``pnpula {degrade,sample,verify,info}``.

Exit codes: 0 ok, 1 invalid configuration, 2 runtime failure (including a
partial run), 3 a verification criterion failed.
"""
import argparse
import logging
import math
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from ._accel import DISABLED_BY_ENV, HAS_NUMBA
from .config import AUTO, ExperimentConfig, load_config
from .denoisers import GaussianDenoiser, GMMDenoiser, IdentityDenoiser
from .diagnostics import (FourierMoments, MomentSnapshots, MultiscaleMoments, PSNRTraceObserver,
                          RunningMoments, SampleRecorder, SelectedTraceObserver, acf,
                          l2_to_reference_trace, multiscale_std, psnr, ssim, write_csv)
from .errors import ConfigError, DimensionError, PnPError
from .fields import read_image, write_pgm, write_raw
from .operators import GaussianLikelihood, Identity, make_box_blur, make_mask
from .samplers import (ProblemSpec, SamplerConfig, load_checkpoint, run_chain, save_checkpoint,
                       validate_config)
from .verify import run_suites, synthetic_image

log = logging.getLogger("pnpula")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
AUTO_DELTA_FACTOR = 0.999


# --- building blocks ----------------------------------------------------------------

class Degraded:
    """Clean image, observation and forward model for one configuration."""

    def __init__(self, truth, y, op, sigma, task):
        self.truth, self.y, self.op, self.sigma, self.task = truth, y, op, sigma, task

    @property
    def y_image(self):
        """Observation as an image (zero-filled for inpainting)."""
        return self.op.adjoint(self.y) if self.task == "inpaint" else self.y


def load_truth(cfg):
    src = cfg["experiment"]["input"]
    try:
        x = synthetic_image(64) if src == "synthetic" else read_image(src)
    except OSError as exc:
        raise ConfigError(f"cannot read input image {src}: {exc}") from None
    if x.ndim != 2 or min(x.shape) < 1:
        raise DimensionError(f"input must be a 2D image, got shape {x.shape}")
    return x


def degrade(cfg):
    """Deterministic observation ``y = A x + n`` for the configured task.

    Inpainting observations are noiseless: the kept pixels are exact copies
    and ``degradation.sigma`` is not used.
    """
    d = cfg["degradation"]
    task = cfg["experiment"]["task"]
    truth = load_truth(cfg)
    h, w = truth.shape
    rng = np.random.default_rng(d["seed"])
    if task == "inpaint":
        op = make_mask(h, w, d["hidden_fraction"], seed=d["seed"] + 1)
        return Degraded(truth, op.apply(truth), op, 0.0, task)
    op = make_box_blur(d["blur_size"], h, w) if task == "deblur" else Identity((h, w))
    y = op.apply(truth)
    if d["sigma"] > 0:
        y = y + d["sigma"] * rng.standard_normal(y.shape)
    return Degraded(truth, y, op, d["sigma"], task)


def build_denoiser(cfg):
    d = cfg["denoiser"]
    kind = d["kind"]
    if kind == "gmm":
        return GMMDenoiser(d["weights"], d["means"], d["variances"])
    if kind == "gaussian":
        return GaussianDenoiser(d["mean"], d["variance"])
    if kind == "identity":
        return IdentityDenoiser()
    from .external import ExternalDenoiser
    if d["command"]:
        return ExternalDenoiser(command=shlex.split(d["command"]), lipschitz=d["lipschitz"], timeout=d["timeout"])
    host, _, port = d["address"].rpartition(":")
    return ExternalDenoiser(address=(host or "127.0.0.1", int(port)), lipschitz=d["lipschitz"], timeout=d["timeout"])


def build_problem(cfg, deg, denoiser):
    if deg.task == "inpaint":
        return ProblemSpec.inpaint(deg.op, deg.y, denoiser, deg.truth)
    if deg.sigma <= 0:
        raise ConfigError("sampling needs degradation.sigma > 0 for deblur/denoise")
    lik = GaussianLikelihood(deg.op, deg.y, deg.sigma)
    if deg.task == "deblur":
        return ProblemSpec.deblur(lik, denoiser, deg.truth)
    return ProblemSpec("denoise", denoiser, likelihood=lik, ground_truth=deg.truth)


def sampler_config(cfg, problem, seed_offset=0):
    """Resolve ``auto`` step size and tail parameter against the problem's constants."""
    s = cfg["sampler"]
    common = dict(alpha=s["alpha"], eps=s["eps"], c_lo=s["c_lo"], c_hi=s["c_hi"])
    L = problem.denoiser.lipschitz(s["eps"])
    L_y = problem.likelihood_lipschitz
    inp = problem.is_inpainting
    lam = s["lam"]
    if lam == AUTO:
        lam = validate_config(SamplerConfig(delta=1.0, lam=1.0, **common), L, L_y, inpainting=inp).lambda_max
        lam = 1.0 if math.isinf(lam) else lam
    delta = s["delta"]
    if delta == AUTO:
        rep = validate_config(SamplerConfig(delta=1.0, lam=lam, **common), L, L_y, inpainting=inp)
        bound = min(rep.delta_th, rep.delta_ppnp) if s["variant"] == "ppnp-ula" else rep.delta_th
        delta = AUTO_DELTA_FACTOR * bound
    return SamplerConfig(delta=delta, lam=lam, n_iter=s["n_iter"], burn_in=s["burn_in"],
                         thinning=s["thinning"], seed=s["seed"] + seed_offset,
                         variant=s["variant"], strict=s["strict"], **common)


def _out_dir(cfg):
    out = Path(cfg["experiment"]["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save_image(out, name, x, lo=None, hi=None):
    write_raw(out / f"{name}.pnpf", x)
    lo = float(np.min(x)) if lo is None else lo
    hi = float(np.max(x)) if hi is None else hi
    write_pgm(out / f"{name}.pgm", x, lo, hi)


# --- subcommands ----------------------------------------------------------------------

def cmd_degrade(cfg, args):
    deg = degrade(cfg)
    out = _out_dir(cfg)
    _save_image(out, "truth", deg.truth, 0.0, 1.0)
    _save_image(out, "y", deg.y_image, 0.0, 1.0)
    rec = {"task": deg.task, "shape": "x".join(map(str, deg.truth.shape)), "seed": cfg["degradation"]["seed"]}
    if deg.task == "inpaint":
        np.savetxt(out / "mask.txt", deg.op.indices, fmt="%d")
        rec["kept_pixels"] = deg.op.indices.size
        rec["hidden_fraction"] = 1.0 - deg.op.indices.size / deg.truth.size
    else:
        clean = deg.op.apply(deg.truth)
        rec["sigma"] = deg.sigma
        rec["noise_mse"] = float(np.mean((deg.y - clean) ** 2))
        if deg.task == "deblur":
            rec["blur_size"] = cfg["degradation"]["blur_size"]
    rec["psnr_y_db"] = psnr(deg.y_image, deg.truth)
    with open(out / "degradation.txt", "w") as f:
        for k, v in rec.items():
            f.write(f"{k} = {v}\n")
    print(f"wrote observation to {out} (PSNR(y) = {rec['psnr_y_db']:.2f} dB)")
    return EXIT_OK


class _ChainObservers:
    def __init__(self, cfg, shape, truth):
        dg = cfg["diagnostics"]
        self.moments = RunningMoments(shape)
        self.fourier = FourierMoments(shape) if dg["fourier"] else None
        levels = dg["multiscale_levels"]
        self.multiscale = MultiscaleMoments(shape, levels) if levels > 0 else None
        self.snapshots = MomentSnapshots(shape)
        self.pixel_traces = SelectedTraceObserver(shape, dg["acf_pilot"], "pixel")
        self.fourier_traces = SelectedTraceObserver(shape, dg["acf_pilot"], "fourier") if dg["fourier"] else None
        self.quality = PSNRTraceObserver(truth, every=dg["trace_stride"], with_ssim=dg["ssim"])
        self.samples = SampleRecorder(every=dg["trace_stride"], max_samples=max(dg["keep_samples"], 0))

    def all(self):
        return [o for o in (self.moments, self.fourier, self.multiscale, self.snapshots, self.pixel_traces,
                            self.fourier_traces, self.quality, self.samples) if o is not None]


def _acf_columns(obs, max_lag, notes):
    cols = {"lag": list(range(max_lag + 1))}
    sources = [("pixel", obs.pixel_traces)]
    if obs.fourier_traces is not None:
        sources.append(("fourier", obs.fourier_traces))
    for domain, o in sources:
        for name, tr in o.traces.items():
            try:
                cols[f"{domain}_{name}"] = list(acf(tr.array(), max_lag))
            except PnPError as exc:
                notes.append(f"ACF {domain}/{name} skipped: {exc}")
    return cols if len(cols) > 1 else None


def cmd_sample(cfg, args):
    deg = degrade(cfg)
    denoiser = build_denoiser(cfg)
    try:
        return _sample(cfg, args, deg, denoiser)
    finally:
        denoiser.close()


def _sample(cfg, args, deg, denoiser):
    problem = build_problem(cfg, deg, denoiser)
    out = _out_dir(cfg)
    n_chains = cfg["experiment"]["n_chains"]
    dg = cfg["diagnostics"]
    shape = deg.truth.shape
    report = [f"pnpula {__version__}, backend {kernels.BACKEND}"]
    t0 = time.perf_counter()
    merged, partial, total_iters, first, printed = None, False, 0, None, 0
    for c in range(n_chains):
        scfg = sampler_config(cfg, problem, seed_offset=c)
        if c == 0:
            rep = problem.validate(scfg)
            report += [f"delta = {scfg.delta:.6g} (dimensionless step)", f"lambda = {scfg.lam:.6g} (dimensionless)"]
            report += [f"{line} (dimensionless)" if "rule" not in line else line for line in rep.lines()]
            print("\n".join(report))
            printed = len(report)
        obs = _ChainObservers(cfg, shape, deg.truth)
        state = None
        ckpt = out / "checkpoint"
        if args.resume and c == 0 and ckpt.with_suffix(".ckpt").exists():
            state = load_checkpoint(ckpt, scfg)
            report.append(f"resumed chain 0 at k = {state.k} iterations")
        summary = run_chain(problem, scfg, obs.all(), state=state)
        total_iters += summary.iterations
        if summary.partial:
            partial = True
            report.append(f"chain {c}: PARTIAL after {summary.state.k} iterations ({summary.error})")
        if c == 0:
            first = obs
            if dg["checkpoint"]:
                save_checkpoint(ckpt, summary.state, scfg)
        merged = obs if merged is None else _merge(merged, obs)
        if summary.projection_activations:
            report.append(f"chain {c}: tail term active at {summary.projection_activations} iterations")
    elapsed = time.perf_counter() - t0

    notes = []
    m = merged.moments
    if m.n == 0:
        report.append("no recorded samples (burn_in too long or run interrupted)")
        _write_report(out, report)
        return EXIT_RUNTIME
    _save_image(out, "mmse", m.mean, 0.0, 1.0)
    if m.n >= 2:
        _save_image(out, "std", m.std_map(), 0.0)
        if merged.multiscale is not None:
            for i, s in enumerate(multiscale_std(merged.multiscale)):
                _save_image(out, f"std_scale{i}", s, 0.0)
        if merged.fourier is not None:
            _save_image(out, "fourier_logstd", np.fft.fftshift(merged.fourier.log_std_map()))
        snap = first.snapshots.trace()
        write_csv(out / "std_rmse_trace.csv", {"n_samples": snap.iterations, "rmse": snap.values})
    else:
        notes.append("std maps need at least 2 samples")
    cols = _acf_columns(first, dg["acf_max_lag"], notes)
    if cols is not None:
        write_csv(out / "acf.csv", cols)
    q = first.quality
    tr = {"iteration": q.psnr.iterations, "psnr_db": q.psnr.values}
    if dg["ssim"]:
        tr["ssim"] = q.ssim.values
    write_csv(out / "traces.csv", tr)
    if first.samples.samples:
        l2 = l2_to_reference_trace(first.samples.samples, m.mean)
        write_csv(out / "l2_trace.csv", {"iteration": l2.iterations, "l2_to_mmse": l2.values})
        write_raw(out / "samples.pnpf", np.concatenate([x for _, x in first.samples.samples], axis=0))

    p_y, p_m = psnr(deg.y_image, deg.truth), psnr(m.mean, deg.truth)
    report += [
        f"chains: {n_chains}",
        f"iterations: {total_iters} iterations",
        f"recorded samples: {m.n} samples",
        f"runtime: {elapsed:.2f} s",
        f"throughput: {total_iters / max(elapsed, 1e-12):.1f} iterations/s",
        f"PSNR(y): {p_y:.2f} dB",
        f"PSNR(MMSE): {p_m:.2f} dB",
    ]
    if dg["ssim"] and min(shape) >= 11:
        report.append(f"SSIM(MMSE): {ssim(m.mean, deg.truth):.4f} (dimensionless)")
    if deg.task == "inpaint" and m.n >= 2:
        report.append(f"max std on observed pixels: {float(m.std_map().ravel()[deg.op.indices].max()):.3g} (intensity)")
    report += notes
    report.append("status: PARTIAL" if partial else "status: complete")
    _write_report(out, report)
    print("\n".join(report[printed:]))
    return EXIT_RUNTIME if partial else EXIT_OK


def _merge(a, b):
    a.moments = a.moments.merge(b.moments)
    if a.fourier is not None:
        a.fourier = a.fourier.merge(b.fourier)
    if a.multiscale is not None:
        a.multiscale = a.multiscale.merge(b.multiscale)
    return a


def _write_report(out, lines):
    with open(out / "report.txt", "w") as f:
        f.write("\n".join(lines) + "\n")


def cmd_verify(cfg, args):
    names = args.suites or ["all"]
    try:
        results = run_suites(names)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    for r in results:
        print(r.line(), flush=True)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_info(cfg, args):
    print(f"pnpula {__version__}")
    print(f"kernel backend: {kernels.BACKEND} (numba installed: {HAS_NUMBA}, disabled by env: {DISABLED_BY_ENV})")
    print("\n# resolved configuration")
    print(cfg.to_text(), end="")
    if args.config is not None or args.set:
        deg = degrade(cfg)
        denoiser = build_denoiser(cfg)
        try:
            problem = build_problem(cfg, deg, denoiser)
            scfg = sampler_config(cfg, problem)
            print("# parameter rules")
            print(f"delta = {scfg.delta:.6g}, lambda = {scfg.lam:.6g}")
            for line in problem.validate(scfg).lines():
                print(line)
        finally:
            denoiser.close()
    return EXIT_OK


# --- entry point ----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="experiment config file (key = value with sections)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="pnpula", description="Plug & Play Langevin sampling for imaging")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("degrade", parents=[common], help="write the observation y (and mask)")
    s = sub.add_parser("sample", parents=[common], help="run the chain(s) and write all artifacts")
    s.add_argument("--resume", action="store_true", help="continue chain 0 from the checkpoint in the output dir")
    v = sub.add_parser("verify", parents=[common], help="run acceptance suites")
    v.add_argument("suites", nargs="*", help="suite names, 'all' (default) or 'none'")
    sub.add_parser("info", parents=[common], help="print backend, resolved config and parameter rules")
    return p


COMMANDS = {"degrade": cmd_degrade, "sample": cmd_sample, "verify": cmd_verify, "info": cmd_info}


def resolve_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        cfg.set(key.strip(), val.strip())
    base = Path(args.config).parent if args.config else None
    return cfg.validate(base)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PnPError, OSError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
