"""Alternating GAN training loop and the feature-alignment probe.

Each batch runs one discriminator step (features detached from the generator,
only discriminator parameters move) followed by one generator step
(discriminator frozen, only generator parameters move). Batches interleave
source and target samples, so both domain terms are populated except in
degenerate tails, which are flagged in the step stats.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from sklearn.metrics import roc_auc_score
from torch import nn
from torch.nn.utils import clip_grad_norm_

from .data import DOMAIN_SOURCE, Corpus, DomainSample, EpochSampler
from .discriminator import (DiscriminatorConfig, GlobalDiscriminator,
                            build_discriminator, downsample_map,
                            select_features)
from .errors import ConfigError, NonFiniteLossError
from .generator import BACKBONE_WIDTHS, LayoutGenerator, samples_to_tensors
from .losses import (LossWeights, MatchCosts, SMOOTHING_SCHEMES,
                     generator_total_loss, hungarian_match,
                     pd_discriminator_loss, pd_generator_loss,
                     reconstruction_loss, smooth_labels)


@dataclass
class TrainConfig:
    # Defaults are the full-scale recipe; desk presets override them.
    epochs: int = 300
    batch_size: int = 128
    lr_backbone: float = 1e-5
    lr_rest: float = 1e-4
    lr_drop_epoch: int = 200
    lr_drop_factor: float = 0.1
    n_per_domain: int = 8000
    weights: LossWeights = field(default_factory=LossWeights)
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    match: MatchCosts = field(default_factory=MatchCosts)
    smoothing: str = "one_target"
    seed: int = 0
    desk_scale: bool = False
    # model
    n_queries: int = 8
    d_model: int = 128
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    backbone_widths: tuple[int, ...] = BACKBONE_WIDTHS
    score_threshold: float = 0.5
    # optimization
    grad_clip: float = 0.1
    weight_decay: float = 1e-4
    sample_with_replacement: bool = False
    deterministic: bool = True
    checkpoint_every: int = 0        # epochs; 0 = final only
    device: str = "cpu"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("need epochs >= 1 and batch_size >= 2")
        if not (0 < self.lr_drop_epoch < self.epochs) and self.epochs > 1:
            raise ConfigError("lr_drop_epoch must lie inside (0, epochs)")
        if min(self.lr_backbone, self.lr_rest) <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.smoothing not in SMOOTHING_SCHEMES:
            raise ConfigError(f"unknown smoothing scheme {self.smoothing!r}")
        self.backbone_widths = tuple(self.backbone_widths)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        d["disc"] = self.disc.to_dict()
        d["match"] = asdict(self.match)
        d["backbone_widths"] = list(self.backbone_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "disc" in d:
            d["disc"] = DiscriminatorConfig.from_dict(d["disc"])
        if "match" in d:
            d["match"] = MatchCosts(**d["match"])
        if "backbone_widths" in d:
            d["backbone_widths"] = tuple(d["backbone_widths"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


def paper_config() -> TrainConfig:
    """The full-scale recipe, kept as documentation; not runnable at desk scale."""
    return TrainConfig()


def desk_config(**overrides) -> TrainConfig:
    """Small preset that trains in minutes on a CPU."""
    base = dict(epochs=12, batch_size=16, lr_backbone=1e-4, lr_rest=1e-3,
                lr_drop_epoch=9, n_per_domain=128, seed=0, desk_scale=True)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class StepStats:
    epoch: int
    step: int
    pass_type: str                     # "disc" or "gen"
    l_pd: float = math.nan
    l_pd_g: float = math.nan
    l_rec: float = math.nan
    l_g_total: float = math.nan
    n_source: int = 0
    n_target: int = 0

    def to_dict(self) -> dict:
        d = {"type": "step", "epoch": self.epoch, "step": self.step,
             "pass": self.pass_type, "n_source": self.n_source,
             "n_target": self.n_target}
        for k in ("l_pd", "l_pd_g", "l_rec", "l_g_total"):
            v = getattr(self, k)
            if not math.isnan(v):
                d[k] = v
        return d


@dataclass
class TrainResult:
    generator: LayoutGenerator
    discriminator: nn.Module
    log: list[dict]
    checkpoint_path: Path | None = None


def _param_groups(module: nn.Module, lr: float, weight_decay: float) -> list[dict]:
    decayed = [p for p in module.parameters() if p.requires_grad and p.ndim >= 2]
    plain = [p for p in module.parameters() if p.requires_grad and p.ndim < 2]
    groups = []
    if decayed:
        groups.append({"params": decayed, "lr": lr, "weight_decay": weight_decay})
    if plain:
        groups.append({"params": plain, "lr": lr, "weight_decay": 0.0})
    return groups


def build_generator(config: TrainConfig) -> LayoutGenerator:
    return LayoutGenerator(
        n_queries=config.n_queries, d_model=config.d_model,
        n_heads=config.n_heads, n_encoder_layers=config.n_encoder_layers,
        n_decoder_layers=config.n_decoder_layers,
        backbone_widths=config.backbone_widths)


def save_checkpoint(path: str | Path, generator: LayoutGenerator,
                    discriminator: nn.Module, config: TrainConfig,
                    extras: dict | None = None) -> Path:
    """Single archive: parameter arrays keyed by module path + a config block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "generator": generator.state_dict(),
        "discriminator": discriminator.state_dict(),
        "config": config.to_dict(),
        "extras": extras or {},
    }, path)
    return path


def load_checkpoint(path: str | Path, device: str = "cpu"
                    ) -> tuple[LayoutGenerator, nn.Module, TrainConfig, dict]:
    blob = torch.load(Path(path), map_location=device, weights_only=False)
    config = TrainConfig.from_dict(blob["config"])
    generator = build_generator(config)
    generator.load_state_dict(blob["generator"])
    discriminator = build_discriminator(config.disc, config.backbone_widths)
    discriminator.load_state_dict(blob["discriminator"])
    generator.to(device).eval()
    discriminator.to(device).eval()
    return generator, discriminator, config, blob.get("extras", {})


class Trainer:
    def __init__(self, config: TrainConfig, corpus: Corpus):
        if min(corpus.manifest.image_dims) < 32:
            raise ConfigError(f"corpus dims too small: {corpus.manifest.image_dims}")
        self.config = config
        self.corpus = corpus
        self.device = torch.device(config.device)
        self.sampler = EpochSampler(corpus.manifest, config.n_per_domain,
                                    config.seed,
                                    with_replacement=config.sample_with_replacement)
        if config.deterministic:
            torch.use_deterministic_algorithms(True, warn_only=True)
        torch.manual_seed(config.seed)
        self.generator = build_generator(config).to(self.device)
        self.discriminator = build_discriminator(
            config.disc, config.backbone_widths).to(self.device)

        wd = config.weight_decay
        g_groups = _param_groups(self.generator.backbone, config.lr_backbone, wd)
        head = nn.ParameterList(self.generator.head_parameters())
        g_groups += _param_groups(head, config.lr_rest, wd)
        self.g_opt = torch.optim.Adam(g_groups)
        self.d_opt = torch.optim.Adam(
            _param_groups(self.discriminator, config.lr_rest, wd))
        self._initial_lrs = [g["lr"] for g in (*self.g_opt.param_groups,
                                               *self.d_opt.param_groups)]

    # -- batch plumbing -----------------------------------------------------

    def _split(self, batch: list[DomainSample]):
        source = [s for s in batch if s.domain == DOMAIN_SOURCE]
        target = [s for s in batch if s.domain != DOMAIN_SOURCE]
        return source, target

    def _smoothed_targets(self, samples: list[DomainSample]) -> torch.Tensor:
        maps = np.stack([s.white_patch for s in samples])
        smoothed = smooth_labels(maps, self.config.smoothing, self.config.weights)
        return torch.from_numpy(smoothed).to(self.device)

    def _disc_forward(self, features: torch.Tensor,
                      image_dims: tuple[int, int]) -> torch.Tensor:
        kind = self.config.disc.kind
        if kind == "global":
            return self.discriminator(features)
        out_dims = image_dims if kind == "pixel" else self.config.disc.patch_dims
        return self.discriminator(features, out_dims)

    def _disc_targets(self, samples: list[DomainSample]) -> torch.Tensor:
        """Smoothed supervision matching the discriminator's output shape."""
        kind = self.config.disc.kind
        if kind == "global":
            # Scalar domain labels (1 = source/inpainted, 0 = target/clean),
            # smoothed with the same scheme as the maps.
            labels = np.array(
                [1.0 if s.domain == DOMAIN_SOURCE else 0.0 for s in samples],
                dtype=np.float32)
            smoothed = smooth_labels(labels, self.config.smoothing,
                                     self.config.weights)
            return torch.from_numpy(smoothed).to(self.device)
        full = self._smoothed_targets(samples)
        if kind == "patch":
            return downsample_map(full, self.config.disc.patch_dims)
        return full

    def _features(self, samples: list[DomainSample]) -> torch.Tensor:
        images, saliency = samples_to_tensors(samples, device=self.device)
        pyramid = self.generator.extract_features(images, saliency)
        return select_features(pyramid, self.config.disc.feature_level)

    # -- steps ---------------------------------------------------------------

    def step_discriminator(self, batch: list[DomainSample],
                           epoch: int = 0, step: int = 0) -> StepStats:
        source, target = self._split(batch)
        image_dims = self.corpus.manifest.image_dims
        preds, targets = {}, {}
        for name, samples in (("s", source), ("t", target)):
            if not samples:
                continue
            with torch.no_grad():          # no gradient into the generator
                feats = self._features(samples)
            preds[name] = self._disc_forward(feats, image_dims)
            targets[name] = self._disc_targets(samples)
        loss = pd_discriminator_loss(preds.get("s"), targets.get("s"),
                                     preds.get("t"), targets.get("t"),
                                     self.config.weights)
        stats = StepStats(epoch=epoch, step=step, pass_type="disc",
                          l_pd=float(loss.detach()),
                          n_source=len(source), n_target=len(target))
        if not math.isfinite(stats.l_pd):
            raise NonFiniteLossError("discriminator loss is not finite",
                                     stats.to_dict())
        self.d_opt.zero_grad()
        loss.backward()
        self.d_opt.step()
        return stats

    def step_generator(self, batch: list[DomainSample],
                       epoch: int = 0, step: int = 0) -> StepStats:
        source, target = self._split(batch)
        image_dims = self.corpus.manifest.image_dims
        cfg = self.config
        for p in self.discriminator.parameters():
            p.requires_grad_(False)
        try:
            ordered = source + target
            images, saliency = samples_to_tensors(ordered, device=self.device)
            pyramid, pred = self.generator(images, saliency)
            feats = select_features(pyramid, cfg.disc.feature_level)

            pred_s = pred_t = target_t = None
            if source:
                pred_s = self._disc_forward(feats[:len(source)], image_dims)
            if target:
                pred_t = self._disc_forward(feats[len(source):], image_dims)
                target_t = self._disc_targets(target)
            l_pd_g = pd_generator_loss(pred_s, pred_t, target_t, cfg.weights)

            if source:
                rec_terms = []
                for i, sample in enumerate(source):
                    single = pred.sample(i)
                    assignment = hungarian_match(single, sample.gt_layout, cfg.match)
                    rec_terms.append(reconstruction_loss(
                        single, sample.gt_layout, assignment, cfg.match))
                l_rec = torch.stack(rec_terms).mean()
            else:
                l_rec = torch.zeros((), device=self.device)

            total = generator_total_loss(l_rec, l_pd_g, cfg.weights)
            stats = StepStats(epoch=epoch, step=step, pass_type="gen",
                              l_pd_g=float(l_pd_g.detach()),
                              l_rec=float(l_rec.detach()),
                              l_g_total=float(total.detach()),
                              n_source=len(source), n_target=len(target))
            if not math.isfinite(stats.l_g_total):
                raise NonFiniteLossError("generator loss is not finite",
                                         stats.to_dict())
            self.g_opt.zero_grad()
            total.backward()
            clip_grad_norm_(self.generator.parameters(), cfg.grad_clip)
            self.g_opt.step()
        finally:
            for p in self.discriminator.parameters():
                p.requires_grad_(True)
        return stats

    # -- loop ----------------------------------------------------------------

    def _apply_lr_schedule(self, epoch: int) -> tuple[float, float]:
        scale = self.config.lr_drop_factor if epoch >= self.config.lr_drop_epoch else 1.0
        for group, lr0 in zip((*self.g_opt.param_groups, *self.d_opt.param_groups),
                              self._initial_lrs):
            group["lr"] = lr0 * scale
        return self.config.lr_backbone * scale, self.config.lr_rest * scale

    def train(self, out_dir: str | Path | None = None) -> TrainResult:
        cfg = self.config
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        log: list[dict] = []
        step = 0
        try:
            for epoch in range(cfg.epochs):
                lr_backbone, lr_rest = self._apply_lr_schedule(epoch)
                ids = self.sampler.epoch(epoch)
                by_domain = {i: self.corpus.samples[i].domain for i in ids}
                log.append({
                    "type": "epoch", "epoch": epoch,
                    "lr_backbone": lr_backbone, "lr_rest": lr_rest,
                    "source_ids": [i for i in ids if by_domain[i] == DOMAIN_SOURCE],
                    "target_ids": [i for i in ids if by_domain[i] != DOMAIN_SOURCE],
                })
                for lo in range(0, len(ids), cfg.batch_size):
                    batch = [self.corpus.samples[i] for i in ids[lo:lo + cfg.batch_size]]
                    log.append(self.step_discriminator(batch, epoch, step).to_dict())
                    log.append(self.step_generator(batch, epoch, step).to_dict())
                    step += 1
                if out is not None and cfg.checkpoint_every and \
                        (epoch + 1) % cfg.checkpoint_every == 0:
                    save_checkpoint(out / f"checkpoint_ep{epoch:04d}.pt",
                                    self.generator, self.discriminator, cfg,
                                    extras={"epoch": epoch,
                                            "image_dims": list(self.corpus.manifest.image_dims)})
        except NonFiniteLossError as err:
            if out is not None:
                with open(out / "diagnostics.json", "w") as f:
                    json.dump({"error": str(err), "stats": err.stats}, f, indent=2)
            raise

        ckpt = None
        if out is not None:
            ckpt = save_checkpoint(out / "checkpoint_final.pt",
                                   self.generator, self.discriminator, cfg,
                                   extras={"epoch": cfg.epochs - 1,
                                           "image_dims": list(self.corpus.manifest.image_dims)})
            with open(out / "train_log.jsonl", "w") as f:
                for record in log:
                    f.write(json.dumps(record, sort_keys=True) + "\n")
        return TrainResult(generator=self.generator,
                           discriminator=self.discriminator,
                           log=log, checkpoint_path=ckpt)


def train(config: TrainConfig, corpus: Corpus,
          out_dir: str | Path | None = None) -> TrainResult:
    return Trainer(config, corpus).train(out_dir=out_dir)


# ---------------------------------------------------------------------------
# feature-alignment probe
# ---------------------------------------------------------------------------

class _PixelProbe(nn.Module):
    def __init__(self, in_channels: int, hidden: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, 1, 1),
        )

    def forward(self, x):
        return self.net(x)


def probe_alignment(generator: LayoutGenerator, samples: list[DomainSample],
                    seed: int = 0, steps: int = 250, lr: float = 5e-3,
                    device: str = "cpu") -> float:
    """Residual domain discrepancy, measured as inpainted-pixel detectability.

    A fresh probe is trained on frozen level-1 features to predict the
    white-patch map (all-zero for target samples); the returned value is the
    pixel-level ROC-AUC on a held-out split. 0.5 = domains indistinguishable.
    """
    source = [s for s in samples if s.domain == DOMAIN_SOURCE]
    target = [s for s in samples if s.domain != DOMAIN_SOURCE]
    if min(len(source), len(target)) < 20:
        raise ValueError("probe needs at least 20 samples per domain")

    rng = np.random.default_rng(seed)
    train_set, eval_set = [], []
    for group in (source, target):
        order = rng.permutation(len(group))
        half = len(group) // 2
        train_set += [group[i] for i in order[:half]]
        eval_set += [group[i] for i in order[half:]]

    device = torch.device(device)
    generator = generator.to(device).eval()

    def featurize(group):
        feats, labels = [], []
        with torch.no_grad():
            for lo in range(0, len(group), 32):
                chunk = group[lo:lo + 32]
                images, saliency = samples_to_tensors(chunk, device=device)
                pyramid = generator.extract_features(images, saliency)
                feats.append(pyramid.shallow)
                labels.append(torch.from_numpy(
                    np.stack([s.white_patch for s in chunk])).to(device))
        return torch.cat(feats), torch.cat(labels)

    feats_tr, labels_tr = featurize(train_set)
    feats_ev, labels_ev = featurize(eval_set)
    image_dims = labels_tr.shape[-2:]

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        probe = _PixelProbe(feats_tr.shape[1]).to(device)
        opt = torch.optim.Adam(probe.parameters(), lr=lr)
        bce = nn.BCEWithLogitsLoss()
        for _ in range(steps):
            logits = nn.functional.interpolate(
                probe(feats_tr), size=image_dims, mode="bilinear",
                align_corners=False).squeeze(1)
            loss = bce(logits, labels_tr)
            opt.zero_grad()
            loss.backward()
            opt.step()

    with torch.no_grad():
        logits = nn.functional.interpolate(
            probe(feats_ev), size=image_dims, mode="bilinear",
            align_corners=False).squeeze(1)
        scores = torch.sigmoid(logits).cpu().numpy().ravel()
    truth = labels_ev.cpu().numpy().ravel() > 0.5
    return float(roc_auc_score(truth, scores))
