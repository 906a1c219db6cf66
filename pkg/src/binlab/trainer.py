"""Staged adversarial training: texture stage, binarizer stage, joint game.

The schedule has four stages: (1) train the texture generator against
its own patch discriminator, (2) freeze it and train the binarizer on
the pseudo-pairs it emits, (3) unfreeze and couple both generators
through the joint discriminator, (4) fine-tune with the same joint
rule. Discriminators always minimize their classification loss (that
is, they ascend the adversarial value); generators descend it with
flipped labels, or with one of the two baseline coupling signals.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
from torch import nn

from .dataset import DatasetManifest, sample_unpaired_batch
from .errors import ConfigError, UsageError
from .losses import (
    LossReport,
    LossWeights,
    atanet_objective,
    bce_fake,
    bce_real,
    content_loss,
    l2_loss,
    style_loss,
    udbnet_objective,
)
from .networks import (
    Binarizer,
    NetworkSpec,
    PatchDiscriminator,
    TextureGenerator,
    initialize_weights,
    joint_pair,
    load_state_npz,
    save_state_npz,
    to_tensor,
)

COUPLING_MODES = ("flipped_label", "confusion", "gradient_reversal")
STAGE_NAMES = {1: "atanet", 2: "udbnet", 3: "joint", 4: "finetune"}
ADAM_BETAS = (0.5, 0.999)
NET_NAMES = ("t", "f", "d_t", "d_f", "j_d")
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class StageEpochs:
    atanet: int = 15
    udbnet: int = 20
    joint: int = 10
    finetune: int = 30

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"epochs.{f.name} must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    """Complete description of a training run."""

    epochs: StageEpochs = field(default_factory=StageEpochs)
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    batch_size: int = 4
    coupling_mode: str = "flipped_label"
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    patch_size: int = 256
    gen_base_channels: int = 32
    gen_depth: int = 5
    disc_base_channels: int = 64
    disc_depth: int = 4
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.coupling_mode not in COUPLING_MODES:
            raise ConfigError(
                f"unknown coupling_mode {self.coupling_mode!r}, "
                f"expected one of {COUPLING_MODES}"
            )
        factor = 2 ** max(self.gen_depth, self.disc_depth)
        if self.patch_size % factor:
            raise ConfigError(
                f"patch_size {self.patch_size} must be divisible by {factor}"
            )
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")


def config_to_dict(config: TrainConfig) -> dict:
    return asdict(config)


def config_from_dict(data: dict) -> TrainConfig:
    """Build a TrainConfig, rejecting unknown keys at any level."""
    payload = dict(data)
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(payload) - known
    if unknown:
        raise UsageError(f"unknown config key(s): {sorted(unknown)}")
    for key, cls in (("epochs", StageEpochs), ("weights", LossWeights)):
        if key in payload and isinstance(payload[key], dict):
            sub_known = {f.name for f in fields(cls)}
            sub_unknown = set(payload[key]) - sub_known
            if sub_unknown:
                raise UsageError(
                    f"unknown config key(s): {sorted(key + '.' + k for k in sub_unknown)}"
                )
            payload[key] = cls(**payload[key])
    return TrainConfig(**payload)


def apply_overrides(data: dict, overrides: dict[str, str]) -> dict:
    """Apply dotted ``key=value`` overrides onto a config dictionary.

    Values are coerced to the type of the value they replace; unknown
    keys raise UsageError naming the key.
    """
    result = json.loads(json.dumps(data))
    defaults = config_to_dict(TrainConfig())
    for dotted, raw in overrides.items():
        parts = dotted.split(".")
        node, ref = result, defaults
        for part in parts[:-1]:
            if not isinstance(ref, dict) or part not in ref:
                raise UsageError(f"unknown config key: {dotted}")
            node = node.setdefault(part, {})
            ref = ref[part]
        leaf = parts[-1]
        if not isinstance(ref, dict) or leaf not in ref:
            raise UsageError(f"unknown config key: {dotted}")
        current = ref[leaf]
        if isinstance(current, bool):
            value = raw.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            value = int(raw)
        elif isinstance(current, float):
            value = float(raw)
        else:
            value = raw
        node[leaf] = value
    return result


class _ReverseGradient(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return x.clone()

    @staticmethod
    def backward(ctx, grad):
        return -grad


def reverse_gradient(x: torch.Tensor) -> torch.Tensor:
    """Identity forward; sign-inverted gradient (scale 1.0) backward."""
    return _ReverseGradient.apply(x)


def coupling_signal(
    mode: str, scores_t_branch: torch.Tensor, scores_f_branch: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Generator-side and discriminator-side joint losses for one mode.

    The joint discriminator's own loss labels the texture branch 1 and
    the binarization branch 0 in every mode; callers feed it detached
    pairs. Generator losses differ per mode: flipped labels invert the
    targets, confusion pulls scores to the uniform 0.5 target, and
    gradient reversal keeps the true-label loss but expects the caller
    to route the pair through ``reverse_gradient`` first.
    """
    jd = bce_real(scores_t_branch) + bce_fake(scores_f_branch)
    if mode == "flipped_label":
        return bce_fake(scores_t_branch), bce_real(scores_f_branch), jd
    if mode == "confusion":
        t = 0.5 * (bce_real(scores_t_branch) + bce_fake(scores_t_branch))
        f = 0.5 * (bce_real(scores_f_branch) + bce_fake(scores_f_branch))
        return t, f, jd
    if mode == "gradient_reversal":
        return bce_real(scores_t_branch), bce_fake(scores_f_branch), jd
    raise ConfigError(f"unknown coupling mode {mode!r}")


@dataclass
class TrainState:
    """Everything needed to resume training mid-run."""

    config: TrainConfig
    nets: dict[str, nn.Module]
    opts: dict[str, torch.optim.Optimizer]
    rng: np.random.Generator
    stage: int = 1
    epoch: int = 0
    step: int = 0
    averages: dict[str, list[float]] = field(default_factory=dict)
    history: list[LossReport] = field(default_factory=list, repr=False)
    out_dir: str | None = None
    log_path: str | None = None


def init_state(config: TrainConfig, out_dir: str | None = None) -> TrainState:
    """Build and deterministically initialize all five networks."""
    gen = torch.Generator().manual_seed(config.seed)
    nets: dict[str, nn.Module] = {
        "t": TextureGenerator(config.gen_base_channels, config.gen_depth),
        "f": Binarizer(config.gen_base_channels, config.gen_depth),
        "d_t": PatchDiscriminator(
            NetworkSpec("patch_discriminator", config.disc_base_channels, config.disc_depth)
        ),
        "d_f": PatchDiscriminator(
            NetworkSpec("patch_discriminator", config.disc_base_channels, config.disc_depth)
        ),
        "j_d": PatchDiscriminator(
            NetworkSpec(
                "joint_discriminator",
                config.disc_base_channels,
                config.disc_depth,
                input_channels=2,
            )
        ),
    }
    for name in NET_NAMES:
        initialize_weights(nets[name], gen)
    opts = {
        name: torch.optim.Adam(
            nets[name].parameters(), lr=config.learning_rate, betas=ADAM_BETAS
        )
        for name in NET_NAMES
    }
    log_path = os.path.join(out_dir, "loss_log.jsonl") if out_dir else None
    return TrainState(
        config=config,
        nets=nets,
        opts=opts,
        rng=np.random.default_rng(config.seed),
        out_dir=out_dir,
        log_path=log_path,
    )


def parameter_checksum(module: nn.Module) -> str:
    """SHA-256 over the ordered raw bytes of every parameter tensor."""
    h = hashlib.sha256()
    for key, value in module.state_dict().items():
        h.update(key.encode("utf-8"))
        h.update(value.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def _opt_step(opt: torch.optim.Optimizer, loss: torch.Tensor) -> None:
    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()


def _scalar(value) -> float:
    if isinstance(value, torch.Tensor):
        return float(value.detach())
    return float(value)


def _mask_of(clean: torch.Tensor) -> torch.Tensor:
    # Tensor twin of imaging.make_text_mask: ink where intensity < 0.5.
    return (clean < 0.5).to(clean.dtype)


def _step_stage1(state: TrainState, clean: torch.Tensor, degraded: torch.Tensor) -> LossReport:
    t, d_t = state.nets["t"], state.nets["d_t"]
    weights = state.config.weights
    generated, style_ref, style_gen = t(clean, degraded)
    disc_loss = bce_real(d_t(degraded)) + bce_fake(d_t(generated.detach()))
    _opt_step(state.opts["d_t"], disc_loss)
    adv = bce_real(d_t(generated))
    style = style_loss(style_ref, style_gen)
    content = content_loss(clean, generated, _mask_of(clean))
    total = atanet_objective(adv, 0.0, style, content, weights)
    _opt_step(state.opts["t"], total)
    return LossReport(
        adv_T=_scalar(adv),
        style=_scalar(style),
        content=_scalar(content),
        total_atanet=_scalar(total),
        disc_T=_scalar(disc_loss),
    )


def _step_stage2(state: TrainState, clean: torch.Tensor, degraded: torch.Tensor) -> LossReport:
    t, f, d_f = state.nets["t"], state.nets["f"], state.nets["d_f"]
    weights = state.config.weights
    with torch.no_grad():
        generated, _, _ = t(clean, degraded)
    binarized = f(generated)
    disc_loss = bce_real(d_f(clean)) + bce_fake(d_f(binarized.detach()))
    _opt_step(state.opts["d_f"], disc_loss)
    adv = bce_real(d_f(binarized))
    l2 = l2_loss(clean, binarized)
    total = udbnet_objective(adv, 0.0, l2, weights)
    _opt_step(state.opts["f"], total)
    return LossReport(
        adv_F=_scalar(adv),
        l2=_scalar(l2),
        total_udbnet=_scalar(total),
        disc_F=_scalar(disc_loss),
    )


def _step_joint(state: TrainState, clean: torch.Tensor, degraded: torch.Tensor) -> LossReport:
    t, f = state.nets["t"], state.nets["f"]
    d_t, d_f, j_d = state.nets["d_t"], state.nets["d_f"], state.nets["j_d"]
    weights = state.config.weights
    mode = state.config.coupling_mode

    generated, style_ref, style_gen = t(clean, degraded)
    gen_const = generated.detach()
    binarized = f(gen_const)
    binarized_real = f(degraded)

    # (a) Patch discriminators on their own games.
    disc_t_loss = bce_real(d_t(degraded)) + bce_fake(d_t(gen_const))
    _opt_step(state.opts["d_t"], disc_t_loss)
    disc_f_loss = bce_real(d_f(clean)) + bce_fake(d_f(binarized.detach()))
    _opt_step(state.opts["d_f"], disc_f_loss)

    # (b) Joint discriminator: texture branch labeled 1, binarizer branch 0.
    scores_t_det = j_d(joint_pair(clean, gen_const))
    scores_f_det = j_d(joint_pair(binarized_real.detach(), degraded))
    _, _, jd_loss = coupling_signal(mode, scores_t_det, scores_f_det)
    _opt_step(state.opts["j_d"], jd_loss)

    # (c) Generators against the refreshed discriminators.
    pair_t = joint_pair(clean, generated)
    pair_f = joint_pair(binarized_real, degraded)
    if mode == "gradient_reversal":
        pair_t = reverse_gradient(pair_t)
        pair_f = reverse_gradient(pair_f)
    joint_t, joint_f, _ = coupling_signal(mode, j_d(pair_t), j_d(pair_f))

    adv_t = bce_real(d_t(generated))
    style = style_loss(style_ref, style_gen)
    content = content_loss(clean, generated, _mask_of(clean))
    total_t = atanet_objective(adv_t, joint_t, style, content, weights)
    _opt_step(state.opts["t"], total_t)

    adv_f = bce_real(d_f(binarized))
    l2 = l2_loss(clean, binarized)
    total_f = udbnet_objective(adv_f, joint_f, l2, weights)
    _opt_step(state.opts["f"], total_f)

    return LossReport(
        adv_T=_scalar(adv_t),
        adv_F=_scalar(adv_f),
        adv_joint_T=_scalar(joint_t),
        adv_joint_F=_scalar(joint_f),
        style=_scalar(style),
        content=_scalar(content),
        l2=_scalar(l2),
        total_atanet=_scalar(total_t),
        total_udbnet=_scalar(total_f),
        disc_T=_scalar(disc_t_loss),
        disc_F=_scalar(disc_f_loss),
        disc_joint=_scalar(jd_loss),
    )


def _record(state: TrainState, report: LossReport) -> None:
    state.history.append(report)
    for name, value in report.as_dict().items():
        bucket = state.averages.setdefault(name, [0.0, 0.0])
        bucket[0] += value
        bucket[1] += 1.0
    if state.log_path:
        with open(state.log_path, "a", encoding="utf-8") as fh:
            for line in report.to_records(state.step, state.stage):
                fh.write(line + "\n")


def steps_per_epoch(manifest: DatasetManifest, config: TrainConfig) -> int:
    n = len(manifest.splits["train"].degraded)
    return math.ceil(n / config.batch_size)


def _run_stage(state: TrainState, manifest: DatasetManifest, stage_id: int, step_fn) -> TrainState:
    if state.stage != stage_id:
        raise ConfigError(f"state is in stage {state.stage}, cannot run stage {stage_id}")
    if "train" not in manifest.splits or not manifest.splits["train"].degraded:
        raise ConfigError("empty training dataset")
    config = state.config
    epochs = getattr(config.epochs, STAGE_NAMES[stage_id])
    spe = steps_per_epoch(manifest, config)
    for epoch in range(state.epoch, epochs):
        for _ in range(spe):
            clean_np, degraded_np = sample_unpaired_batch(
                manifest, state.rng, config.batch_size, config.patch_size
            )
            report = step_fn(state, to_tensor(clean_np), to_tensor(degraded_np))
            state.step += 1
            report.check_finite(state.step)
            _record(state, report)
            if (
                config.checkpoint_every
                and state.out_dir
                and state.step % config.checkpoint_every == 0
            ):
                save_checkpoint(
                    state, os.path.join(state.out_dir, "checkpoints", f"step_{state.step:06d}")
                )
        state.epoch = epoch + 1
    state.stage = stage_id + 1
    state.epoch = 0
    return state


def stage1_train_atanet(state: TrainState, manifest: DatasetManifest) -> TrainState:
    """Texture generator vs. its discriminator; the joint player idles."""
    return _run_stage(state, manifest, 1, _step_stage1)


def stage2_train_udbnet(state: TrainState, manifest: DatasetManifest) -> TrainState:
    """Binarizer on frozen-generator pseudo-pairs; texture weights untouched."""
    return _run_stage(state, manifest, 2, _step_stage2)


def stage3_joint_train(state: TrainState, manifest: DatasetManifest) -> TrainState:
    """All five networks, alternating discriminator and generator updates."""
    return _run_stage(state, manifest, 3, _step_joint)


def stage4_finetune(state: TrainState, manifest: DatasetManifest) -> TrainState:
    """Continued joint training under identical settings."""
    return _run_stage(state, manifest, 4, _step_joint)


_STAGE_FNS = {
    1: stage1_train_atanet,
    2: stage2_train_udbnet,
    3: stage3_joint_train,
    4: stage4_finetune,
}


def advance_to_stage(state: TrainState, stage_id: int) -> TrainState:
    """Skip ahead to a later stage; only legal between stages."""
    if stage_id not in STAGE_NAMES:
        raise ConfigError(f"no such stage: {stage_id}")
    if state.epoch != 0:
        raise ConfigError("cannot change stage mid-epoch")
    if stage_id < state.stage:
        raise ConfigError(f"cannot rewind from stage {state.stage} to {stage_id}")
    state.stage = stage_id
    return state


def run_stages(
    state: TrainState,
    manifest: DatasetManifest,
    stages: tuple[int, ...] = (1, 2, 3, 4),
) -> TrainState:
    """Execute the requested stage subset in order, checkpointing boundaries."""
    for stage_id in stages:
        if state.stage != stage_id:
            advance_to_stage(state, stage_id)
        _STAGE_FNS[stage_id](state, manifest)
        if state.out_dir:
            save_checkpoint(
                state,
                os.path.join(state.out_dir, "checkpoints", f"stage_{stage_id}"),
            )
    return state


def save_checkpoint(state: TrainState, path: str | os.PathLike) -> None:
    """Write a resumable checkpoint directory (write-temp-then-rename)."""
    path = str(path)
    tmp = f"{path}.tmp-{os.getpid()}"
    os.makedirs(tmp, exist_ok=True)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": config_to_dict(state.config),
        "stage": state.stage,
        "epoch": state.epoch,
        "step": state.step,
    }
    with open(os.path.join(tmp, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name in NET_NAMES:
        save_state_npz(os.path.join(tmp, f"net_{name}.npz"), state.nets[name])
        torch.save(state.opts[name].state_dict(), os.path.join(tmp, f"opt_{name}.pt"))
    with open(os.path.join(tmp, "rng.json"), "w", encoding="utf-8") as fh:
        json.dump(state.rng.bit_generator.state, fh)
    with open(os.path.join(tmp, "averages.json"), "w", encoding="utf-8") as fh:
        json.dump(state.averages, fh, sort_keys=True)
    if os.path.exists(path):
        shutil.rmtree(path)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike, out_dir: str | None = None) -> TrainState:
    """Restore a TrainState so the next update is bit-identical."""
    path = str(path)
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ConfigError(f"not a checkpoint directory: {path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    config = config_from_dict(manifest["config"])
    state = init_state(config, out_dir=out_dir)
    for name in NET_NAMES:
        load_state_npz(os.path.join(path, f"net_{name}.npz"), state.nets[name])
        opt_state = torch.load(os.path.join(path, f"opt_{name}.pt"), weights_only=True)
        state.opts[name].load_state_dict(opt_state)
    with open(os.path.join(path, "rng.json"), "r", encoding="utf-8") as fh:
        state.rng.bit_generator.state = json.load(fh)
    with open(os.path.join(path, "averages.json"), "r", encoding="utf-8") as fh:
        state.averages = {k: list(v) for k, v in json.load(fh).items()}
    state.stage = manifest["stage"]
    state.epoch = manifest["epoch"]
    state.step = manifest["step"]
    return state


@dataclass(frozen=True)
class ToyAlignmentResult:
    mode: str
    accuracy_start: float
    accuracy_end: float
    accuracy_min: float
    steps: int


def toy_alignment_run(
    mode: str = "flipped_label",
    seed: int = 0,
    steps: int = 2000,
    pretrain_steps: int = 300,
    batch_size: int = 64,
    lr_classifier: float = 0.05,
    lr_generators: float = 0.005,
    eval_size: int = 2000,
    eval_every: int = 50,
) -> ToyAlignmentResult:
    """One-dimensional rehearsal of the joint game.

    Two fixed Gaussians stand in for the texture and binarizer branches,
    each passed through a learnable affine map. The joint classifier is
    pretrained until it separates them, then the chosen coupling signal
    drives the adversarial phase; held-out accuracy before and after
    tells whether the branches were pulled onto the same distribution.
    The classifier learns faster than the generators so the game settles
    at the indistinguishable equilibrium instead of orbiting it.
    """
    if mode not in COUPLING_MODES:
        raise ConfigError(f"unknown coupling mode {mode!r}")
    torch_gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)

    gen_a = nn.Linear(1, 1)
    gen_b = nn.Linear(1, 1)
    with torch.no_grad():
        for g in (gen_a, gen_b):
            g.weight.fill_(1.0)
            g.bias.zero_()
    classifier = nn.Sequential(nn.Linear(1, 8), nn.LeakyReLU(0.2), nn.Linear(8, 1))
    for layer in classifier:
        if isinstance(layer, nn.Linear):
            with torch.no_grad():
                layer.weight.normal_(0.0, 0.5, generator=torch_gen)
                layer.bias.zero_()

    opt_c = torch.optim.Adam(classifier.parameters(), lr=lr_classifier, betas=ADAM_BETAS)
    opt_g = torch.optim.Adam(
        list(gen_a.parameters()) + list(gen_b.parameters()),
        lr=lr_generators,
        betas=ADAM_BETAS,
    )

    def draw(n: int, generator: np.random.Generator) -> tuple[torch.Tensor, torch.Tensor]:
        za = generator.normal(-2.0, 0.5, size=(n, 1))
        zb = generator.normal(2.0, 0.5, size=(n, 1))
        return torch.from_numpy(za).float(), torch.from_numpy(zb).float()

    def scores(x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(classifier(x))

    def accuracy() -> float:
        held_out = np.random.default_rng(seed + 10_000)
        za, zb = draw(eval_size, held_out)
        with torch.no_grad():
            sa = scores(gen_a(za))
            sb = scores(gen_b(zb))
        correct = float((sa > 0.5).float().mean() + (sb <= 0.5).float().mean())
        return correct / 2.0

    for _ in range(pretrain_steps):
        za, zb = draw(batch_size, rng)
        with torch.no_grad():
            xa, xb = gen_a(za), gen_b(zb)
        _opt_step(opt_c, bce_real(scores(xa)) + bce_fake(scores(xb)))

    accuracy_start = accuracy()
    accuracy_min = accuracy_start

    for step in range(1, steps + 1):
        za, zb = draw(batch_size, rng)
        xa, xb = gen_a(za), gen_b(zb)
        _, _, jd = coupling_signal(mode, scores(xa.detach()), scores(xb.detach()))
        _opt_step(opt_c, jd)
        if mode == "gradient_reversal":
            xa, xb = reverse_gradient(xa), reverse_gradient(xb)
        loss_a, loss_b, _ = coupling_signal(mode, scores(xa), scores(xb))
        _opt_step(opt_g, loss_a + loss_b)
        if step % eval_every == 0:
            accuracy_min = min(accuracy_min, accuracy())

    accuracy_end = accuracy()
    return ToyAlignmentResult(
        mode=mode,
        accuracy_start=accuracy_start,
        accuracy_end=accuracy_end,
        accuracy_min=min(accuracy_min, accuracy_end),
        steps=steps,
    )
