"""Command-line entry point: ``gradets <command> --config <file> [--out <dir>] [--seed <n>]``.

All artifacts live under ``--out``::

    corpus/utt_NNNN/          synthetic utterances (synth-data)
    encoder.ckpt              pre-trained encoder (train-encoder)
    scorenet_finetune.ckpt    score network, frozen encoder (train-finetune)
    encoder_e2e.ckpt, scorenet_e2e.ckpt   jointly trained pair (train-e2e)
    *_loss.csv                per-step training losses
    infer/utt_NNNN/           encoder.f64, enhanced.f64 [, enhanced.wav]
    metrics.csv, sweep.csv
"""

from __future__ import annotations

import argparse
import shutil
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import align, corpus as corpus_mod, metrics
from . import rng as rng_mod
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, load_config
from .corpus import CorpusFormatError, SynthConfig, SyntheticUtterance
from .diffusion import InferenceConfig, NoiseSchedule, oracle_score_fn, reverse_ode
from .encoder import EncoderModel, aligned_prediction, encoder_forward, init_encoder
from .report import write_report
from .scorenet import ScoreNet, data_normalisation, init_scorenet, score_fn_for
from .scorenet import train_diffusion_finetune, train_e2e
from .signal import MelConfig, MelSpectrogram, griffin_lim, save_wav
from .training import TrainOptions, TrainResult, train_encoder

COMMANDS = ("synth-data", "train-encoder", "train-finetune", "train-e2e", "infer", "eval", "sweep")
LOSS_COLUMNS = ("step", "epoch", "loss", "l_enc", "l_d")


class Run:
    """Resolved configuration plus the output directory layout."""

    def __init__(self, cfg: Dict, out: Path):
        self.cfg = cfg
        self.out = out

    @property
    def corpus_dir(self) -> Path:
        return self.out / "corpus"

    def synth_config(self) -> SynthConfig:
        c = self.cfg
        return SynthConfig(bins=c["corpus.bins"], channels=c["corpus.channels"],
                           mel_noise=c["corpus.mel_noise"], emg_noise=c["corpus.emg_noise"])

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.cfg["diffusion.beta0"], self.cfg["diffusion.beta1"])

    def split(self) -> Tuple[List[SyntheticUtterance], List[SyntheticUtterance]]:
        utts = corpus_mod.read_corpus(self.corpus_dir)
        n_test = self.cfg["corpus.n_test"]
        if not 0 <= n_test < len(utts):
            raise ValueError(f"corpus.n_test={n_test} leaves no training utterances out of {len(utts)}")
        return utts[:len(utts) - n_test], utts[len(utts) - n_test:]

    def train_options(self, encoder_only: bool = False) -> TrainOptions:
        c = self.cfg
        return TrainOptions(
            epochs=c["encoder.epochs"] if encoder_only else c["training.epochs"],
            batch_size=c["training.batch"],
            learning_rate=c["encoder.lr"] if encoder_only else c["training.lr"],
            seed=c["training.seed"],
            lam=c["encoder.lambda"],
            lambda_d=c["training.lambda_d"],
            weighting=c["diffusion.weighting"],
            t_min=c["diffusion.t_min"],
            max_steps=c["training.max_steps"] or None,
        )

    def inference_config(self, steps=None, temperature=None) -> InferenceConfig:
        return InferenceConfig(steps or self.cfg["inference.steps"],
                               temperature or self.cfg["inference.temperature"],
                               self.cfg["diffusion.t_min"])

    def load_encoder(self, name: str = "encoder.ckpt") -> EncoderModel:
        params = load_checkpoint(self.out / name)
        radius = int(params.pop("meta.window_radius")[0])
        return EncoderModel(params, radius)

    def save_encoder(self, model: EncoderModel, name: str = "encoder.ckpt") -> None:
        save_checkpoint({**model.params, "meta.window_radius": np.array([float(model.window_radius)])},
                        self.out / name)

    def inference_models(self) -> Tuple[EncoderModel, Optional[ScoreNet]]:
        if self.cfg["training.regime"] == "e2e":
            encoder, net_file = self.load_encoder("encoder_e2e.ckpt"), "scorenet_e2e.ckpt"
        else:
            encoder, net_file = self.load_encoder(), "scorenet_finetune.ckpt"
        if self.cfg["inference.score"] == "oracle":
            return encoder, None
        return encoder, ScoreNet(load_checkpoint(self.out / net_file))


def write_losses(result: TrainResult, path: Path) -> None:
    rows = [{"step": s.step, "epoch": s.epoch, "loss": s.loss, "l_enc": s.l_enc, "l_d": s.l_d}
            for s in result.steps]
    write_report(rows, path, LOSS_COLUMNS)


# --------------------------------------------------------------------------
# commands


def cmd_synth_data(run: Run) -> None:
    c = run.cfg
    utts = corpus_mod.synth_corpus(c["corpus.n_utts"], c["corpus.seed"], c["corpus.mode_mix"], run.synth_config())
    if run.corpus_dir.exists():
        shutil.rmtree(run.corpus_dir)
    corpus_mod.write_corpus(utts, run.corpus_dir)


def cmd_train_encoder(run: Run) -> None:
    train, _ = run.split()
    c = run.cfg
    mel_mean = np.mean(np.concatenate([u.mel.values for u in train]), axis=0)
    model = init_encoder(train[0].emg_features.shape[1], train[0].mel.bins, widths=c["encoder.widths"],
                         window_radius=c["encoder.window_radius"], seed=c["training.seed"], mel_bias=mel_mean)
    model, result = train_encoder(model, train, run.train_options(encoder_only=True))
    run.save_encoder(model)
    write_losses(result, run.out / "encoder_loss.csv")


def _fresh_scorenet(run: Run, train: Sequence[SyntheticUtterance]) -> ScoreNet:
    shift, scale = data_normalisation(train)
    return init_scorenet(train[0].mel.bins, run.cfg["diffusion.widths"], run.cfg["training.seed"], shift, scale)


def cmd_train_finetune(run: Run) -> None:
    train, _ = run.split()
    encoder = run.load_encoder()
    net, result = train_diffusion_finetune(_fresh_scorenet(run, train), encoder, train,
                                           run.train_options(), run.schedule())
    save_checkpoint(net.params, run.out / "scorenet_finetune.ckpt")
    write_losses(result, run.out / "finetune_loss.csv")


def cmd_train_e2e(run: Run) -> None:
    train, _ = run.split()
    encoder = run.load_encoder()
    net, encoder, result = train_e2e(_fresh_scorenet(run, train), encoder, train,
                                     run.train_options(), run.schedule())
    save_checkpoint(net.params, run.out / "scorenet_e2e.ckpt")
    run.save_encoder(encoder, "encoder_e2e.ckpt")
    write_losses(result, run.out / "e2e_loss.csv")


def enhance(run: Run, encoder: EncoderModel, net: Optional[ScoreNet], utt: SyntheticUtterance,
            index: int, cfg: InferenceConfig) -> Tuple[np.ndarray, np.ndarray]:
    """``(encoder prediction, enhanced mel)`` for one utterance.

    With a trained network the unaligned prediction conditions the reverse ODE.
    The oracle score needs the target's time axis, so it uses the aligned prediction.
    """
    sched = run.schedule()
    stream = rng_mod.stream(run.cfg["training.seed"], "infer", index)
    if net is None:
        x_mu = aligned_prediction(encoder, utt, run.cfg["encoder.lambda"])
        return x_mu, reverse_ode(oracle_score_fn(sched, utt.mel.values), sched, x_mu, cfg, stream)
    x_mu, _ = encoder_forward(encoder, utt.emg_features)
    return x_mu, reverse_ode(score_fn_for(net), sched, x_mu, cfg, stream)


def cmd_infer(run: Run) -> None:
    _, test = run.split()
    encoder, net = run.inference_models()
    cfg = run.inference_config()
    root = run.out / "infer"
    if root.exists():
        shutil.rmtree(root)
    for k, utt in enumerate(test):
        pred, enhanced = enhance(run, encoder, net, utt, k, cfg)
        d = root / f"utt_{k:04d}"
        d.mkdir(parents=True)
        corpus_mod.write_matrix(d / "encoder.f64", pred)
        corpus_mod.write_matrix(d / "enhanced.f64", enhanced)
        if run.cfg["inference.wav"]:
            mel_cfg = MelConfig(bins=enhanced.shape[1])
            save_wav(griffin_lim(MelSpectrogram(enhanced), run.cfg["inference.gl_iters"], mel_cfg),
                     d / "enhanced.wav")


def to_target_axis(pred: np.ndarray, others: Sequence[np.ndarray], gt: np.ndarray) -> List[np.ndarray]:
    """Map ``pred`` and same-length ``others`` onto the target frames via a Mel-distance DTW path."""
    if pred.shape[0] == gt.shape[0]:
        return [pred, *others]
    dummy = np.zeros((pred.shape[0], 1))
    path, _ = align.dtw_align(align.build_cost_matrix(pred, dummy, gt, np.zeros(gt.shape[0], int), 0.0))
    return [align.apply_alignment(x, path, gt.shape[0]) for x in (pred, *others)]


def score_systems(test: Sequence[SyntheticUtterance], preds: Sequence[np.ndarray],
                  enhanced: Sequence[np.ndarray]) -> Dict[str, Dict[str, float]]:
    gts = [u.mel.values for u in test]
    aligned = [to_target_axis(p, [e], g) for p, e, g in zip(preds, enhanced, gts)]
    systems = {"encoder": [a[0] for a in aligned], "diffusion": [a[1] for a in aligned], "ground_truth": gts}
    gt_all = np.concatenate(gts)
    out = {}
    for name, hyps in systems.items():
        out[name] = {
            "lsd": float(np.mean([metrics.lsd(g, h) for g, h in zip(gts, hyps)])),
            "fad": metrics.fad_from_features(gt_all, np.concatenate(hyps)),
            "recovery_error": float(np.mean([np.linalg.norm(h - g) / np.linalg.norm(g) for g, h in zip(gts, hyps)])),
        }
    return out


def cmd_eval(run: Run) -> None:
    _, test = run.split()
    root = run.out / "infer"
    preds, enhanced = [], []
    for k in range(len(test)):
        preds.append(corpus_mod.read_matrix(root / f"utt_{k:04d}" / "encoder.f64"))
        enhanced.append(corpus_mod.read_matrix(root / f"utt_{k:04d}" / "enhanced.f64"))
    scores = score_systems(test, preds, enhanced)
    rows = [{"system": name, "lsd": s["lsd"], "fad": s["fad"]} for name, s in scores.items()]
    write_report(rows, run.out / "metrics.csv", ("system", "lsd", "fad"))


def cmd_sweep(run: Run) -> None:
    _, test = run.split()
    encoder, net = run.inference_models()
    rows = []
    for steps in run.cfg["sweep.steps"]:
        for theta in run.cfg["sweep.temperatures"]:
            cfg = run.inference_config(steps, theta)
            pairs = [enhance(run, encoder, net, u, k, cfg) for k, u in enumerate(test)]
            s = score_systems(test, [p for p, _ in pairs], [e for _, e in pairs])["diffusion"]
            rows.append({"steps": steps, "temperature": theta, "lsd": s["lsd"], "fad": s["fad"],
                         "recovery_error": s["recovery_error"]})
    write_report(rows, run.out / "sweep.csv", ("steps", "temperature", "lsd", "fad", "recovery_error"))


HANDLERS = {
    "synth-data": cmd_synth_data,
    "train-encoder": cmd_train_encoder,
    "train-finetune": cmd_train_finetune,
    "train-e2e": cmd_train_e2e,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradets", description="Diffusion enhancement of EMG-predicted Mel spectrograms.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="key = value configuration file")
    parser.add_argument("--out", default=".", help="working directory for corpus, checkpoints and reports")
    parser.add_argument("--seed", type=int, default=None, help="overrides corpus.seed and training.seed")
    return parser


def run(command: str, config_path, out=".", seed: Optional[int] = None) -> int:
    """Execute one command; returns a process exit status."""
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg["corpus.seed"] = cfg["training.seed"] = seed
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        HANDLERS[command](Run(cfg, out))
    except (ConfigError, CheckpointError, CorpusFormatError, OSError, ValueError, KeyError) as exc:
        print(f"gradets {command}: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
