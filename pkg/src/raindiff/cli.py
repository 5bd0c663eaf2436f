"""Command-line pipeline: gen-data, train-score, train-prompts, derain, eval, ablate.

Every command resolves its flags (defaults included) into a config echo
that is written next to its outputs, so two runs with identical echoes
produce identical artifacts. Per-image sampler seeds derive from the base
seed xor the image's position in sorted filename order, which keeps
outputs independent of batching or worker layout.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import metrics, report, toyworld
from .checkpoint import load_checkpoint, save_checkpoint
from .energy import EnergyConfig
from .errors import ConfigError, RainDiffError
from .features import (FeatureEncoder, PromptPair, prompt_accuracy, train_prompts)
from .sampler import SamplerConfig, sample
from .scorenet import ScoreNetwork, TrainConfig, train_score_model
from .sde import DiffusionSchedule
from .toyworld import DomainSpec

#: f32 payloads store the encoder seed exactly only below this
MAX_STORED_SEED = 2 ** 24

PROXY_NOTE = ("proxy metrics: mse / psnr(range 4) to hidden ground truth and "
              "prompt clean-probability; not perceptual or no-reference scores")


def _echo_dict(command: str, args: argparse.Namespace, skip: tuple[str, ...] = ()) -> dict:
    flags = {k: v for k, v in sorted(vars(args).items())
             if k not in ("func", *skip) and v is not None}
    return {"command": command, **flags}


def _write_echo(directory: Path, echo: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    report.write_report(directory / "config-echo.txt", echo)


def _split_domain(samples: np.ndarray, holdout_fraction: float = 0.25):
    n_hold = int(round(samples.shape[0] * holdout_fraction))
    cut = samples.shape[0] - n_hold
    return samples[:cut], samples[cut:]


# -- commands ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = DomainSpec(kind=args.kind, image_size=args.size,
                      streak_count=args.streaks, streak_delta=args.delta)
    out = Path(args.out)
    clean = toyworld.make_clean(spec, args.n, args.seed)
    rainy, pairing = toyworld.corrupt(clean, spec, args.seed + 1)
    clean_names = [f"clean_{i:05d}.pgm" for i in range(args.n)]
    rainy_names = [f"rainy_{i:05d}.pgm" for i in range(args.n)]
    if spec.kind == "streak_images":
        toyworld.save_images(out / "clean", clean_names, clean)
        toyworld.save_images(out / "rainy", rainy_names, rainy)
    else:
        # point data: one tab-separated file per split instead of images
        out.mkdir(parents=True, exist_ok=True)
        np.savetxt(out / "clean.tsv", clean, delimiter="\t")
        np.savetxt(out / "rainy.tsv", rainy, delimiter="\t")
        clean_names = [f"row_{i}" for i in range(args.n)]
        rainy_names = [f"row_{i}" for i in range(args.n)]
    out.mkdir(parents=True, exist_ok=True)
    toyworld.write_pair_map(out / "pairs.tsv", rainy_names,
                            [clean_names[j] for j in pairing])
    _write_echo(out, _echo_dict("gen-data", args))
    print(f"wrote {2 * args.n} samples + pairs.tsv under {out}")
    return 0


def cmd_train_score(args) -> int:
    names, data = toyworld.load_domain(args.data)
    schedule = DiffusionSchedule()
    config = TrainConfig(steps=args.steps, batch_size=args.batch,
                         learning_rate=args.lr, seed=args.seed,
                         final_learning_rate=args.lr_final)
    net = train_score_model(data, schedule, config,
                            hidden_dims=(args.hidden, args.hidden))
    arrays = net.to_arrays()
    arrays["t_min"] = np.array([net.t_min])
    save_checkpoint(args.out, arrays)
    echo = _echo_dict("train-score", args)
    echo["n_train_images"] = len(names)
    report.write_report(Path(args.out).with_suffix(".echo.txt"), echo)
    final_loss = float(net.loss_history[-len(net.loss_history) // 10:].mean())
    print(f"final loss (last 10%): {final_loss:.4f}")
    print(f"checkpoint: {args.out}")
    return 0


def cmd_train_prompts(args) -> int:
    if not 0 <= args.encoder_seed < MAX_STORED_SEED:
        raise ConfigError(f"encoder seed must lie in [0, {MAX_STORED_SEED}) "
                          "to be stored exactly")
    _, rainy = toyworld.load_domain(args.rainy)
    _, clean = toyworld.load_domain(args.clean)
    r_train, r_hold = _split_domain(rainy)
    c_train, c_hold = _split_domain(clean)
    encoder = FeatureEncoder.random(rainy.shape[1], seed=args.encoder_seed)
    config = TrainConfig(steps=args.iters, batch_size=args.batch,
                         learning_rate=args.lr, seed=args.seed)
    prompts = train_prompts(encoder, r_train, c_train, config)

    held = np.concatenate([r_hold, c_hold])
    labels = np.concatenate([np.zeros(r_hold.shape[0]), np.ones(c_hold.shape[0])])
    accuracy = prompt_accuracy(encoder, held, labels, prompts)
    save_checkpoint(args.out, {**prompts.to_arrays(), **encoder.to_arrays()})
    echo = _echo_dict("train-prompts", args)
    echo["n_train"] = r_train.shape[0] + c_train.shape[0]
    echo["n_heldout"] = held.shape[0]
    report.write_report(Path(args.out).with_suffix(".echo.txt"), echo)
    final_loss = float(prompts.loss_history[-max(len(prompts.loss_history) // 10, 1):].mean())
    print(f"final loss (last 10%): {final_loss:.4f}")
    print(f"held-out accuracy: {accuracy:.4f}")
    print(f"checkpoint: {args.out}")
    return 0


def load_score_checkpoint(path) -> ScoreNetwork:
    arrays = load_checkpoint(path)
    t_min = float(arrays.pop("t_min")[0]) if "t_min" in arrays else 1e-3
    return ScoreNetwork.from_arrays(arrays, DiffusionSchedule(), t_min=t_min)


def load_prompt_checkpoint(path):
    arrays = load_checkpoint(path)
    return FeatureEncoder.from_arrays(arrays), PromptPair.from_arrays(arrays)


def _derain_dir(input_dir, out_dir, net: ScoreNetwork, encoder, prompts,
                energy: EnergyConfig, ts: float, steps: int, stepper: str,
                seed: int, trace: bool):
    """Run the sampler over a directory; returns (names, outputs)."""
    names, images = toyworld.load_images(input_dir)
    if images.shape[1] != net.input_dim:
        raise ConfigError(f"images have dim {images.shape[1]} but the score "
                          f"checkpoint expects {net.input_dim}")
    if energy.guided and encoder is not None and images.shape[1] != encoder.input_dim:
        raise ConfigError(f"images have dim {images.shape[1]} but the prompt "
                          f"checkpoint expects {encoder.input_dim}")
    h = ts * net.schedule.horizon / steps
    if h < net.t_min:
        raise ConfigError(f"step size {h:.2g} falls below the score model's "
                          f"t_min={net.t_min}; reduce --steps or raise --ts")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = np.empty_like(images)
    for index, (name, image) in enumerate(zip(names, images)):
        config = SamplerConfig(ts_fraction=ts, steps=steps, seed=seed ^ index,
                               energy=energy, stepper=stepper)
        y0, trace_rows = sample(image, net.schedule, net.score, config,
                                encoder, prompts)
        outputs[index] = y0
        if trace:
            with open(out_dir / f"{Path(name).stem}.trace.tsv", "w") as fh:
                fh.write("step\tn\tenergy\tgrad_norm\n")
                for step_i, (n_t, e_val, g_norm) in enumerate(trace_rows, start=1):
                    fh.write(f"{step_i}\t{n_t!r}\t{e_val!r}\t{g_norm!r}\n")
    toyworld.save_images(out_dir, names, outputs)
    return names, outputs


def cmd_derain(args) -> int:
    net = load_score_checkpoint(args.score)
    energy = EnergyConfig(lambda1=args.lambda1, lambda2=args.lambda2,
                          perturb_reference=(args.perturb_ref == "xt"))
    encoder = prompts = None
    if energy.guided:
        if args.prompts is None:
            raise ConfigError("lambda1/lambda2 > 0 needs --prompts")
        encoder, prompts = load_prompt_checkpoint(args.prompts)
    names, _ = _derain_dir(args.input, args.out, net, encoder, prompts, energy,
                           args.ts, args.steps, args.stepper, args.seed, args.trace)
    _write_echo(Path(args.out), _echo_dict("derain", args))
    print(f"derained {len(names)} images -> {args.out}")
    return 0


def _evaluate(pred_names, preds, gt_dir, pair_map, encoder, prompts):
    gt_names, gts = toyworld.load_images(gt_dir)
    gt_index = {name: row for name, row in zip(gt_names, gts)}
    missing = [n for n in pred_names if n not in pair_map]
    if missing:
        raise ConfigError(f"no pair entry for predictions: {missing[:5]}")
    gt_rows = []
    for name in pred_names:
        gt_name = pair_map[name]
        if gt_name not in gt_index:
            raise ConfigError(f"pair target {gt_name} missing from {gt_dir}")
        gt_rows.append(gt_index[gt_name])
    rows = metrics.image_report_rows(pred_names, preds, np.asarray(gt_rows),
                                     encoder, prompts)
    return rows, metrics.aggregate_rows(rows)


def cmd_eval(args) -> int:
    pred_names, preds = toyworld.load_images(args.pred)
    pair_map = toyworld.load_pair_map(args.pairs)
    encoder, prompts = load_prompt_checkpoint(args.prompts)
    rows, aggregates = _evaluate(pred_names, preds, args.gt, pair_map, encoder, prompts)
    doc = {
        "schema": "raindiff-report-1",
        "metric_note": PROXY_NOTE,
        "psnr_definition": "10*log10(4/mse) on the [-1,1] range; mse=0 -> inf",
        "config": _echo_dict("eval", args),
        "aggregates": aggregates,
        "per_image": rows,
    }
    report.write_report(args.report, doc)
    print(f"mean mse: {aggregates['mean_mse']:.6f}")
    print(f"mean clean_prob: {aggregates.get('mean_clean_prob', float('nan')):.4f}")
    print(f"report: {args.report}")
    return 0


def _parse_grid(sweep: str, grid: str | None):
    if sweep == "lambda":
        text = grid or "0:0,73:0,0:0.72,73:0.72"
        settings = []
        for item in text.split(","):
            l1, _, l2 = item.partition(":")
            settings.append((f"l1={l1},l2={l2}", {"lambda1": float(l1), "lambda2": float(l2)}))
        return settings
    if sweep == "ts":
        text = grid or "0.2,0.4,0.5,0.6,0.8"
        return [(f"ts={v}", {"ts": float(v)}) for v in text.split(",")]
    if sweep == "energy-input":
        text = grid or "xt,x0"
        for v in text.split(","):
            if v not in ("xt", "x0"):
                raise ConfigError(f"energy-input grid values must be xt or x0, got {v!r}")
        return [(f"reference={v}", {"perturb_ref": v}) for v in text.split(",")]
    raise ConfigError(f"unknown sweep {sweep!r}")


def cmd_ablate(args) -> int:
    settings = _parse_grid(args.sweep, args.grid)
    net = load_score_checkpoint(args.score)
    encoder, prompts = load_prompt_checkpoint(args.prompts)
    pair_map = toyworld.load_pair_map(args.pairs)
    workdir = Path(args.workdir) if args.workdir else Path(args.report).parent / (
        Path(args.report).stem + "_runs")

    table = []
    for label, override in settings:
        run = {"lambda1": args.lambda1, "lambda2": args.lambda2, "ts": args.ts,
               "perturb_ref": args.perturb_ref, **override}
        energy = EnergyConfig(lambda1=run["lambda1"], lambda2=run["lambda2"],
                              perturb_reference=(run["perturb_ref"] == "xt"))
        slug = label.replace("=", "_").replace(",", "_")
        names, preds = _derain_dir(args.input, workdir / slug, net,
                                   encoder if energy.guided else None,
                                   prompts if energy.guided else None,
                                   energy, run["ts"], args.steps, args.stepper,
                                   args.seed, trace=False)
        _, aggregates = _evaluate(names, preds, args.gt, pair_map, encoder, prompts)
        table.append({"setting": label,
                      "mean_mse": aggregates["mean_mse"],
                      "mean_clean_prob": aggregates["mean_clean_prob"]})
        print(f"{label:24s} mean_mse={aggregates['mean_mse']:.6f} "
              f"mean_clean_prob={aggregates['mean_clean_prob']:.4f}")

    doc = {
        "schema": "raindiff-report-1",
        "metric_note": PROXY_NOTE,
        "sweep": args.sweep,
        "config": _echo_dict("ablate", args),
        "results": table,
    }
    report.write_report(args.report, doc)
    print(f"report: {args.report}")
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="raindiff",
        description="energy-guided diffusion deraining on synthetic toy images")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate unpaired rainy/clean splits")
    p.add_argument("--kind", default="streak_images",
                   choices=["streak_images", "gaussian2d"])
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--streaks", type=int, default=3)
    p.add_argument("--delta", type=float, default=0.8)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-score", help="train the clean-domain score model")
    p.add_argument("--data", required=True, help="directory of clean images")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int, default=30000)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--lr-final", type=float, default=5e-5,
                   help="linear decay target; pass 0 to disable decay")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--hidden", type=int, default=384)
    p.add_argument("--seed", type=int, default=2)
    p.set_defaults(func=cmd_train_score)

    p = sub.add_parser("train-prompts", help="train domain prompts on unpaired sets")
    p.add_argument("--rainy", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--encoder-seed", type=int, default=11)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=5e-6)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_train_prompts)

    p = sub.add_parser("derain", help="energy-guided reverse sampling per image")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--score", required=True)
    p.add_argument("--prompts")
    p.add_argument("--lambda1", type=float, default=73.0)
    p.add_argument("--lambda2", type=float, default=0.72)
    p.add_argument("--ts", type=float, default=0.4)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--stepper", default="vp_rule",
                   choices=["vp_rule", "euler_maruyama"])
    p.add_argument("--perturb-ref", default="xt", choices=["xt", "x0"],
                   help="compare against a kernel draw at the current time (xt) "
                        "or the raw input (x0)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", action="store_true")
    p.set_defaults(func=cmd_derain)

    p = sub.add_parser("eval", help="proxy metrics against hidden ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--prompts", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="derain+eval over a parameter grid")
    p.add_argument("--sweep", required=True, choices=["lambda", "ts", "energy-input"])
    p.add_argument("--grid", help="lambda: 'l1:l2,...'; ts: 'v,...'; "
                                  "energy-input: 'xt,x0'")
    p.add_argument("--input", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--score", required=True)
    p.add_argument("--prompts", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--workdir")
    p.add_argument("--lambda1", type=float, default=73.0)
    p.add_argument("--lambda2", type=float, default=0.72)
    p.add_argument("--ts", type=float, default=0.4)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--stepper", default="vp_rule",
                   choices=["vp_rule", "euler_maruyama"])
    p.add_argument("--perturb-ref", default="xt", choices=["xt", "x0"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "lr_final", None) == 0:
        args.lr_final = None
    try:
        return args.func(args)
    except RainDiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
