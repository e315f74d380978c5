"""Command-line front end: corpus generation, training, sweeps, analysis
and sampling.

Every run writes its artifacts into a fresh directory named
<command>-<timestamp>-<seed> under the output root, together with the
fully resolved configuration as run.cfg (flat key=value lines).  Feeding
that file back through --config reproduces the numeric content of every
CSV bit for bit; only timestamps in paths differ.

Option precedence: command-line flag, then config file, then the NE_SEED
environment variable (seed only), then the built-in default.  Exit codes:
0 success, 1 bad usage or bad input files, 2 internal failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np

from .analysis import (
    coverage_table,
    defect_sweep,
    difficulty_stats,
    jacobian_filters,
    mismatch_sweep,
    psnr,
    quality_vs_difficulty,
)
from .backbones import (
    GAUSS3,
    PatchMlp,
    UnitSumConv,
    default_library,
    load_patch_mlp,
    patch_mlp_init,
    save_patch_mlp,
)
from .corpus import DEFAULT_MIX, make_corpus
from .pgm import PgmError, read_pgm, write_pgm
from .plots import heatmap, histogram_plot, image_plot, line_plot
from .sampler import (
    SamplerConfig,
    iterative_denoise,
    make_inpainting_mask,
    observe,
    run_sampler,
)
from .training import (
    LOSS_KINDS,
    NOISE_KINDS,
    NoiseModel,
    TrainConfig,
    TrainingDiverged,
    corrupt,
    train,
)
from .wrapper import WrapMode, WrappedDenoiser


class UserError(Exception):
    """Bad usage or bad input; reported without a traceback, exit 1."""


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def load_config(path: str) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    try:
        with open(path, "r", encoding="ascii") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UserError(f"{path}:{lineno}: expected key=value")
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
    except OSError as exc:
        raise UserError(f"cannot read config {path}: {exc}") from exc
    return out


def write_run_cfg(run_dir: str, command: str, opts: dict) -> None:
    lines = [f"command={command}"]
    for key in sorted(opts):
        lines.append(f"{key}={opts[key]}")
    with open(os.path.join(run_dir, "run.cfg"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def resolve(args, cfg: dict[str, str], key: str, default, cast):
    """Flag > config file > default, with uniform casting and errors.

    An empty config value means "not set": run.cfg records unset options
    as bare keys so that reruns fall back to the same defaults.
    """
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    if cfg.get(key, "") != "":
        try:
            return cast(cfg[key])
        except ValueError as exc:
            raise UserError(f"config key {key}: {exc}") from exc
    return default


def resolve_seed(args, cfg: dict[str, str]) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in cfg:
        try:
            return int(cfg["seed"])
        except ValueError as exc:
            raise UserError(f"config key seed: {exc}") from exc
    env = os.environ.get("NE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UserError(f"NE_SEED: {exc}") from exc
    return 0


def parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_mix(text: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for part in text.split(","):
        if "=" not in part:
            raise ValueError(f"mix entries are family=weight, got {part!r}")
        name, weight = part.split("=", 1)
        out[name.strip()] = float(weight)
    return out


def parse_sigmas(text: str) -> list[float]:
    vals = [float(p) for p in text.split(",") if p.strip()]
    if not vals:
        raise ValueError("empty sigma list")
    return vals


def make_run_dir(out_root: str, command: str, seed: int) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = os.path.join(out_root, f"{command}-{stamp}-{seed}")
    try:
        os.makedirs(path, exist_ok=False)
    except FileExistsError:
        # same command twice within a second: disambiguate, keep both
        for k in range(1, 1000):
            alt = f"{path}.{k}"
            if not os.path.exists(alt):
                os.makedirs(alt)
                return alt
        raise
    except OSError as exc:
        raise UserError(f"cannot create run directory {path}: {exc}") from exc
    return path


def write_csv(path: str, header: list[str], rows) -> None:
    """RFC-4180-style CSV; floats via repr so values round trip exactly."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(float(v)) if isinstance(v, (float, np.floating)) else v
                 for v in row]
            )


def load_corpus_dir(path: str) -> list[np.ndarray]:
    if not os.path.isdir(path):
        raise UserError(f"corpus directory not found: {path}")
    names = sorted(n for n in os.listdir(path) if n.endswith(".pgm"))
    if not names:
        raise UserError(f"no .pgm files in {path}")
    return [read_pgm(os.path.join(path, n)) for n in names]


def load_model(args, cfg) -> WrappedDenoiser:
    ckpt = resolve(args, cfg, "checkpoint", None, str)
    if ckpt is None:
        raise UserError("a --checkpoint is required")
    if not os.path.exists(ckpt):
        raise UserError(f"checkpoint not found: {ckpt}")
    mode = WrapMode(resolve(args, cfg, "mode", "direct", str))
    epsilon = resolve(args, cfg, "epsilon", 1e-5, float)
    return WrappedDenoiser(PatchMlp(load_patch_mlp(ckpt)), mode=mode, epsilon=epsilon)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_corpus(args, cfg) -> int:
    n = resolve(args, cfg, "n", 24, int)
    size = resolve(args, cfg, "size", 64, int)
    mix = resolve(args, cfg, "mix", dict(DEFAULT_MIX), parse_mix)
    seed = resolve_seed(args, cfg)
    if n < 1:
        raise UserError("n must be >= 1")
    out_root = resolve(args, cfg, "out", "out", str)
    run_dir = make_run_dir(out_root, "gen-corpus", seed)

    images = make_corpus(n, size, rng=np.random.default_rng(seed), mix=mix)
    rows = []
    for i, img in enumerate(images):
        name = f"img_{i:04d}.pgm"
        write_pgm(os.path.join(run_dir, name), img)
        rows.append((name, float(img.std())))
    write_csv(os.path.join(run_dir, "manifest.csv"), ["file", "sigma_x"], rows)
    mix_text = ",".join(f"{k}={v}" for k, v in sorted(mix.items()))
    write_run_cfg(run_dir, "gen-corpus",
                  {"n": n, "size": size, "mix": mix_text, "seed": seed})
    print(run_dir)
    return 0


def cmd_train(args, cfg) -> int:
    corpus_dir = resolve(args, cfg, "corpus", None, str)
    if corpus_dir is None:
        raise UserError("a --corpus directory is required")
    seed = resolve_seed(args, cfg)
    mode = WrapMode(resolve(args, cfg, "mode", "direct", str))
    epsilon = resolve(args, cfg, "epsilon", 1e-5, float)
    tile = resolve(args, cfg, "tile", 8, int)
    hidden = resolve(args, cfg, "hidden", 64, int)
    convention = resolve(args, cfg, "convention", "residual", str)
    tcfg = TrainConfig(
        sigma=resolve(args, cfg, "sigma", 25.0, float),
        noise_kind=resolve(args, cfg, "noise", "gaussian", str),
        patch_size=resolve(args, cfg, "patch", 16, int),
        batch=resolve(args, cfg, "batch", 32, int),
        steps=resolve(args, cfg, "steps", 2000, int),
        lr=resolve(args, cfg, "lr", 1e-3, float),
        schedule=resolve(args, cfg, "schedule", "constant", str),
        halve_every=resolve(args, cfg, "halve-every", None, int),
        loss=resolve(args, cfg, "loss", "mse", str),
        objective=resolve(args, cfg, "objective", "supervised", str),
        softne=resolve(args, cfg, "softne", False, parse_bool),
        seed=seed,
    )
    corpus = load_corpus_dir(corpus_dir)
    init = patch_mlp_init(tile, hidden, convention=convention,
                          rng=np.random.default_rng(seed))
    model = WrappedDenoiser(PatchMlp(init), mode=mode, epsilon=epsilon)

    run_dir = make_run_dir(resolve(args, cfg, "out", "out", str), "train", seed)
    trained, curve = train(model, corpus, tcfg)
    save_patch_mlp(os.path.join(run_dir, "model.bin"), trained.backbone.params)
    write_csv(os.path.join(run_dir, "curve.csv"), ["step", "loss"],
              [(i, float(v)) for i, v in enumerate(curve)])
    stride = max(1, len(curve) // 400)
    line_plot(os.path.join(run_dir, "curve.svg"),
              np.arange(len(curve))[::stride], {"loss": curve[::stride]},
              xlabel="step", ylabel="loss", title="training loss")
    write_run_cfg(run_dir, "train", {
        "corpus": corpus_dir, "mode": mode.value, "epsilon": epsilon,
        "tile": tile, "hidden": hidden, "convention": convention,
        "sigma": tcfg.sigma, "noise": tcfg.noise_kind, "patch": tcfg.patch_size,
        "batch": tcfg.batch, "steps": tcfg.steps, "lr": tcfg.lr,
        "schedule": tcfg.schedule,
        "halve-every": "" if tcfg.halve_every is None else tcfg.halve_every,
        "loss": tcfg.loss, "objective": tcfg.objective,
        "softne": tcfg.softne, "seed": seed,
    })
    print(run_dir)
    return 0


def cmd_sweep(args, cfg) -> int:
    model = load_model(args, cfg)
    corpus_dir = resolve(args, cfg, "corpus", None, str)
    if corpus_dir is None:
        raise UserError("a --corpus directory is required")
    images = load_corpus_dir(corpus_dir)
    sigmas = resolve(args, cfg, "sigmas", [5.0, 10.0, 25.0, 50.0], parse_sigmas)
    noise = resolve(args, cfg, "noise", "gaussian", str)
    threads = resolve(args, cfg, "threads", os.cpu_count() or 1, int)
    seed = resolve_seed(args, cfg)

    run_dir = make_run_dir(resolve(args, cfg, "out", "out", str), "sweep", seed)
    res = mismatch_sweep(model, images, sigmas, rng=np.random.default_rng(seed),
                         noise_kind=noise, threads=threads)
    in_m, out_m, ssim_m = res.row_means()
    rows = []
    for i, s in enumerate(res.sigma_tests):
        rows.append((float(s), float(in_m[i]), float(out_m[i]), float(ssim_m[i]),
                     *[float(v) for v in res.output_psnr[i]]))
    per_img = [f"psnr_img{j}" for j in range(len(images))]
    write_csv(os.path.join(run_dir, "sweep.csv"),
              ["sigma", "input_psnr", "output_psnr", "output_ssim", *per_img], rows)
    line_plot(os.path.join(run_dir, "sweep.svg"), res.sigma_tests,
              {"input": in_m, "output": out_m},
              xlabel="test sigma (8-bit units)", ylabel="PSNR (dB)",
              title="noise-mismatch sweep")
    write_run_cfg(run_dir, "sweep", {
        "checkpoint": resolve(args, cfg, "checkpoint", None, str),
        "mode": model.mode.value, "epsilon": model.epsilon,
        "corpus": corpus_dir, "sigmas": ",".join(str(s) for s in sigmas),
        "noise": noise, "threads": threads, "seed": seed,
    })
    print(run_dir)
    return 0


def cmd_analyze(args, cfg) -> int:
    what = args.what
    corpus_dir = resolve(args, cfg, "corpus", None, str)
    if corpus_dir is None:
        raise UserError("a --corpus directory is required")
    images = load_corpus_dir(corpus_dir)
    seed = resolve_seed(args, cfg)
    run_dir = make_run_dir(resolve(args, cfg, "out", "out", str),
                           f"analyze-{what}", seed)
    opts = {"corpus": corpus_dir, "seed": seed}

    if what in ("delta", "coverage"):
        sigmas = resolve(args, cfg, "sigmas", [10.0, 25.0, 50.0], parse_sigmas)
        samples = resolve(args, cfg, "samples", 20000, int)
        patch = resolve(args, cfg, "patch", 8, int)
        stats = difficulty_stats(images, sigmas, n=samples, patch=patch,
                                 rng=np.random.default_rng(seed))
        opts.update(sigmas=",".join(str(s) for s in sigmas),
                    samples=samples, patch=patch)
        if what == "delta":
            write_csv(os.path.join(run_dir, "delta.csv"),
                      ["sigma", "n", "q025", "q975", "mean_sq"],
                      [(s.sigma, len(s.samples), s.q025, s.q975, s.mean_sq)
                       for s in stats.values()])
            write_csv(os.path.join(run_dir, "delta_hist.csv"),
                      ["sigma", "bin_lo", "bin_hi", "count"],
                      [(s.sigma, float(s.hist_edges[i]), float(s.hist_edges[i + 1]),
                        int(s.hist_counts[i]))
                       for s in stats.values() for i in range(len(s.hist_counts))])
            histogram_plot(os.path.join(run_dir, "delta.svg"),
                           {f"sigma={s.sigma:g}": (s.hist_counts, s.hist_edges)
                            for s in stats.values()},
                           xlabel="difficulty", title="difficulty distribution")
        else:
            samples_by = {s.sigma: s.samples for s in stats.values()}
            tab = coverage_table(samples_by, sigmas, sigmas)
            header = ["train_sigma"] + [f"test_{s:g}" for s in sigmas]
            write_csv(os.path.join(run_dir, "coverage.csv"), header,
                      [(float(st), *[float(v) for v in tab.matrix[i]])
                       for i, st in enumerate(sigmas)])
            write_csv(os.path.join(run_dir, "intervals.csv"),
                      ["sigma", "q025", "q975"],
                      [(float(s), *map(float, tab.intervals[float(s)]))
                       for s in sigmas])
            heatmap(os.path.join(run_dir, "coverage.svg"), tab.matrix,
                    [f"{s:g}" for s in sigmas], [f"{s:g}" for s in sigmas],
                    xlabel="test sigma", ylabel="train sigma",
                    title="difficulty coverage (%)")

    elif what == "qdelta":
        model = load_model(args, cfg)
        sigmas = resolve(args, cfg, "sigmas", [10.0, 25.0, 50.0], parse_sigmas)
        samples = resolve(args, cfg, "samples", 4000, int)
        patch = resolve(args, cfg, "patch", 8, int)
        bins = resolve(args, cfg, "bins", 20, int)
        curve = quality_vs_difficulty(model, images, sigmas, n=samples,
                                      patch=patch,
                                      rng=np.random.default_rng(seed), bins=bins)
        rows = []
        for i, s in enumerate(curve.sigmas):
            for j in range(curve.counts.shape[1]):
                rows.append((float(s), float(curve.edges[j]),
                             float(curve.edges[j + 1]), int(curve.counts[i, j]),
                             float(curve.q_mean[i, j]), float(curve.q_std[i, j])))
        write_csv(os.path.join(run_dir, "qdelta.csv"),
                  ["sigma", "bin_lo", "bin_hi", "count", "q_mean", "q_std"], rows)
        centers = 0.5 * (curve.edges[:-1] + curve.edges[1:])
        line_plot(os.path.join(run_dir, "qdelta.svg"), centers,
                  {f"sigma={s:g}": curve.q_mean[i]
                   for i, s in enumerate(curve.sigmas)},
                  xlabel="difficulty", ylabel="quality (dB)",
                  title="normalized quality vs difficulty")
        opts.update(checkpoint=resolve(args, cfg, "checkpoint", None, str),
                    mode=model.mode.value, epsilon=model.epsilon,
                    sigmas=",".join(str(s) for s in sigmas), samples=samples,
                    patch=patch, bins=bins)

    elif what == "ne-defect":
        trials = resolve(args, cfg, "trials", 20, int)
        ckpt = resolve(args, cfg, "checkpoint", None, str)
        rows = []
        if ckpt is not None:
            backbone = PatchMlp(load_patch_mlp(ckpt))
            entries = [(backbone.name, WrappedDenoiser(backbone, mode=m, epsilon=0.0))
                       for m in WrapMode]
        else:
            entries = []
            for bb in default_library(rng=np.random.default_rng(seed)):
                entries.append((bb.name, WrappedDenoiser(bb, mode=WrapMode.NONE)))
                entries.append((bb.name,
                                WrappedDenoiser(bb, mode=WrapMode.DIRECT,
                                                epsilon=0.0)))
        for name, model in entries:
            defects = defect_sweep(model, images, trials=trials,
                                   rng=np.random.default_rng(seed))
            rows.append((name, model.mode.value, float(np.max(defects)),
                         float(np.mean(defects))))
        write_csv(os.path.join(run_dir, "ne_defect.csv"),
                  ["backbone", "mode", "max", "mean"], rows)
        opts.update(trials=trials, checkpoint="" if ckpt is None else ckpt)

    elif what == "jacobian":
        size = resolve(args, cfg, "size", 32, int)
        y = np.asarray(images[0], dtype=np.float64)[:size, :size]
        if y.shape != (size, size):
            raise UserError(f"first corpus image smaller than {size}x{size}")
        model = WrappedDenoiser(UnitSumConv(GAUSS3), mode=WrapMode.DIRECT)
        center = (size // 2) * size + size // 2
        report = jacobian_filters(model, y, rows=[center])
        dev = np.abs(report.row_sums - 1.0)
        write_csv(os.path.join(run_dir, "jacobian.csv"),
                  ["rho", "row_sum_dev_max", "row_sum_dev_mean"],
                  [(float(report.rho), float(dev.max()), float(dev.mean()))])
        image_plot(os.path.join(run_dir, "filter.svg"), report.filters[center],
                   title="equivalent filter at the center pixel")
        opts.update(size=size)
    else:
        raise UserError(f"unknown analysis: {what!r}")

    write_run_cfg(run_dir, f"analyze-{what}", opts)
    print(run_dir)
    return 0


def cmd_sample(args, cfg) -> int:
    what = args.what
    model = load_model(args, cfg)
    seed = resolve_seed(args, cfg)
    image_path = resolve(args, cfg, "image", None, str)
    corpus_dir = resolve(args, cfg, "corpus", None, str)
    if image_path is not None:
        clean = read_pgm(image_path)
        source_key, source = "image", image_path
    elif corpus_dir is not None:
        clean = load_corpus_dir(corpus_dir)[0]
        source_key, source = "corpus", corpus_dir
    else:
        raise UserError("either --image or --corpus is required")

    run_dir = make_run_dir(resolve(args, cfg, "out", "out", str),
                           f"sample-{what}", seed)
    opts = {"checkpoint": resolve(args, cfg, "checkpoint", None, str),
            "mode": model.mode.value, "epsilon": model.epsilon,
            source_key: source, "seed": seed}

    summary_extra: list[tuple[str, float]] = []
    if what == "denoise":
        sigma = resolve(args, cfg, "sigma", 25.0, float)
        scfg = SamplerConfig(
            sigma0=resolve(args, cfg, "sigma0", 1.0, float),
            sigma_floor=resolve(args, cfg, "sigma-floor", 1.0 / 255.0, float),
            h0=resolve(args, cfg, "h0", 0.01, float),
            beta=1.0,
            t_max=resolve(args, cfg, "t-max", 1000, int),
        )
        noisy = corrupt(clean, NoiseModel(kind="gaussian", sigma=sigma),
                        rng=np.random.default_rng(seed))
        traj = iterative_denoise(model, noisy, scfg, clean=clean)
        write_pgm(os.path.join(run_dir, "clean.pgm"), clean)
        write_pgm(os.path.join(run_dir, "noisy.pgm"), noisy)
        write_pgm(os.path.join(run_dir, "denoised.pgm"), traj.x_hat)
        summary_extra.append(("input_psnr", float(psnr(noisy, clean))))
        opts["sigma"] = sigma
        opts["sigma-floor"] = scfg.sigma_floor
        opts["h0"] = scfg.h0
        opts["t-max"] = scfg.t_max
    elif what == "inpaint":
        scfg = SamplerConfig(
            sigma0=resolve(args, cfg, "sigma0", 1.0, float),
            sigma_floor=resolve(args, cfg, "sigma-floor", 0.01, float),
            h0=resolve(args, cfg, "h0", 0.01, float),
            beta=resolve(args, cfg, "beta", 0.01, float),
            t_max=resolve(args, cfg, "t-max", 1000, int),
        )
        fraction = resolve(args, cfg, "fraction", 0.10, float)
        rng = np.random.default_rng(seed)
        projector = make_inpainting_mask(clean.shape, fraction, rng)
        x_c = observe(clean, projector)
        traj = run_sampler(model, projector, x_c, scfg, rng=rng, clean=clean)
        write_pgm(os.path.join(run_dir, "clean.pgm"), clean)
        write_pgm(os.path.join(run_dir, "observed.pgm"),
                  x_c + 0.5 * projector.complement(np.ones_like(x_c)))
        write_pgm(os.path.join(run_dir, "xhat.pgm"), traj.x_hat)
        summary_extra.append(("observed_psnr", float(psnr(x_c, clean))))
        opts["fraction"] = fraction
        opts["sigma0"] = scfg.sigma0
        opts["sigma-floor"] = scfg.sigma_floor
        opts["h0"] = scfg.h0
        opts["beta"] = scfg.beta
        opts["t-max"] = scfg.t_max
    else:
        raise UserError(f"unknown sampling command: {what!r}")

    write_csv(os.path.join(run_dir, "trajectory.csv"),
              ["t", "sigma_hat", "psnr"],
              [(r.t, float(r.sigma_hat), float(r.psnr)) for r in traj.records])
    names = ["stop_reason", "steps", "final_psnr", "best_psnr"]
    values = [traj.stop_reason, traj.steps, float(traj.final_psnr),
              float(traj.best_psnr)]
    for key, val in summary_extra:
        names.append(key)
        values.append(val)
    write_csv(os.path.join(run_dir, "summary.csv"), names, [tuple(values)])
    write_run_cfg(run_dir, f"sample-{what}", opts)
    print(run_dir)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="normeq", description=__doc__.splitlines()[0])
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="RNG seed (default: NE_SEED or 0)")
        p.add_argument("--out", help="output root directory (default: out)")

    p = sub.add_parser("gen-corpus", help="write a synthetic PGM corpus")
    common(p)
    p.add_argument("--n", type=int, help="number of images")
    p.add_argument("--size", type=int, help="image side in pixels")
    p.add_argument("--mix", type=parse_mix,
                   help="family weights, e.g. field=0.4,mosaic=0.6")

    p = sub.add_parser("train", help="train the patch-MLP, bare or wrapped")
    common(p)
    p.add_argument("--corpus", help="directory of clean PGM images")
    p.add_argument("--mode", choices=[m.value for m in WrapMode])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--tile", type=int, help="MLP tile side")
    p.add_argument("--hidden", type=int)
    p.add_argument("--convention", choices=["clean", "residual"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--noise", choices=list(NOISE_KINDS))
    p.add_argument("--patch", type=int, help="training patch side")
    p.add_argument("--batch", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--schedule", choices=["constant", "halve"])
    p.add_argument("--halve-every", type=int)
    p.add_argument("--loss", choices=list(LOSS_KINDS))
    p.add_argument("--objective", choices=["supervised", "n2n"])
    p.add_argument("--softne", action="store_const", const=True)

    p = sub.add_parser("sweep", help="PSNR/SSIM over a grid of test sigmas")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=[m.value for m in WrapMode])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--corpus")
    p.add_argument("--sigmas", type=parse_sigmas, help="comma-separated")
    p.add_argument("--noise", choices=list(NOISE_KINDS))
    p.add_argument("--threads", type=int)

    p = sub.add_parser("analyze", help="difficulty, coverage and filter reports")
    common(p)
    p.add_argument("what",
                   choices=["delta", "coverage", "qdelta", "ne-defect", "jacobian"])
    p.add_argument("--corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=[m.value for m in WrapMode])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--sigmas", type=parse_sigmas)
    p.add_argument("--samples", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--size", type=int)

    p = sub.add_parser("sample", help="iterated denoising and inpainting")
    common(p)
    p.add_argument("what", choices=["denoise", "inpaint"])
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=[m.value for m in WrapMode])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--image", help="clean source PGM")
    p.add_argument("--corpus", help="use the first image of this directory")
    p.add_argument("--sigma", type=float)
    p.add_argument("--fraction", type=float)
    p.add_argument("--sigma0", type=float)
    p.add_argument("--sigma-floor", type=float)
    p.add_argument("--h0", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--t-max", type=int)
    return top


_COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "sample": cmd_sample,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config) if args.config else {}
        return _COMMANDS[args.command](args, cfg)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PgmError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
