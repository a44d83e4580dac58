"""Alternating adversarial training, mean-shape priors and checkpointing."""

from __future__ import annotations

import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .config import TrainConfig, config_from_mapping
from .discriminator import PatchDiscriminator
from .errors import CheckpointError, ContractViolation, NumericFault
from .generator import CoarseDecoder, Encoder, Generator, build_mean_shapes
from .losses import (chamfer, lsgan_discriminator, lsgan_generator, reconstruction_loss,
                     total_loss)
from .optim import Adam, lambda_f_schedule, lr_schedule
from .tensor import Tensor

log = logging.getLogger(__name__)

# where a run reads and writes; kept out of checkpoints so reruns elsewhere are byte-identical
RUN_LOCATION_KEYS = ("out_dir", "manifest")

TRACE_COLUMNS = ("step", "epoch", "lambda_f", "lr_G", "lr_D", "loss_D", "gan_G",
                 "rec_coarse", "rec_fine", "rec", "total")


@dataclass
class StepReport:
    step: int
    epoch: int
    lambda_f: float
    lr_G: float
    lr_D: float
    loss_D: float = 0.0
    gan_G: float = 0.0
    rec_coarse: float = 0.0
    rec_fine: float = 0.0
    rec: float = 0.0
    total: float = 0.0
    extra: dict = field(default_factory=dict)

    def trace_line(self) -> str:
        return "\t".join(repr(getattr(self, c)) for c in TRACE_COLUMNS)


class MeanShapePrior:
    """Frozen autoencoder encoder plus the per-category mean embeddings.

    The same frozen encoder serves as the FPD feature extractor.
    """

    def __init__(self, encoder: Encoder, table: dict):
        self.encoder = encoder
        self.table = table

    def vector(self, category):
        if category in self.table:
            return self.table[category]
        # unknown or missing category: average over all categories
        return np.mean([self.table[k] for k in sorted(self.table)], axis=0)

    def features(self, clouds) -> np.ndarray:
        with T.no_grad():
            rows = [self.encoder(Tensor(np.asarray(getattr(c, "points", c)))).data.reshape(-1)
                    for c in clouds]
        return np.asarray(rows, dtype=np.float64)


def pretrain_prior(cfg: TrainConfig, pairs, seed=None) -> MeanShapePrior:
    """Briefly train encoder + coarse decoder as an autoencoder on complete
    clouds, freeze the encoder and average its embeddings per category."""
    seed = cfg.seed if seed is None else seed
    gcfg = cfg.generator_config()
    rng = np.random.default_rng([seed, 7])
    enc, dec = Encoder(gcfg, rng), CoarseDecoder(gcfg, rng)
    params = {**enc.named_parameters("enc."), **dec.named_parameters("dec.")}
    opt = Adam(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    train = [p for p in pairs if p.split == "train"] or list(pairs)
    dtype = T.get_default_dtype()
    for step in range(cfg.prior_steps):
        batch = np.random.default_rng([seed, 8, step]).choice(len(train), size=min(cfg.prior_batch_size, len(train)), replace=False)
        for p in params.values():
            p.grad = None
        losses = []
        for i in batch:
            q = train[i].complete.points.astype(dtype)
            losses.append(chamfer(dec(enc(Tensor(q))), q, "CD-T").value)
        loss = losses[0]
        for extra in losses[1:]:
            loss = loss + extra
        T.backward(loss * (1.0 / len(losses)), params.values())
        opt.step(cfg.prior_lr)
    by_cat = defaultdict(list)
    for p in train:
        by_cat[p.category].append(p.complete.points.astype(dtype))
    return MeanShapePrior(enc, build_mean_shapes(by_cat, enc))


def _mean(values):
    out = values[0]
    for v in values[1:]:
        out = out + v
    return out * (1.0 / len(values))


class Trainer:
    """Owns generator, discriminator, both optimizers and the step counter.

    Batch order is a function of (seed, epoch) only, so a restored trainer
    continues exactly where an uninterrupted one would be.
    """

    def __init__(self, cfg: TrainConfig, train_pairs, prior: MeanShapePrior | None = None):
        T.set_default_dtype(np.float32 if cfg.dtype == "float32" else np.float64)
        self.cfg = cfg
        self.pairs = [p for p in train_pairs if p.split == "train"] or list(train_pairs)
        if not self.pairs:
            raise ContractViolation("no training pairs")
        self.dtype = T.get_default_dtype()
        self.G = Generator(cfg.generator_config(), seed=cfg.seed)
        self.D = PatchDiscriminator(cfg.discriminator_config(), seed=cfg.seed + 1)
        self.opt_G = Adam(self.G.named_parameters(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.opt_D = Adam(self.D.named_parameters(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.prior = prior
        self.step = 0
        self._real_groups = {}
        self._perm_cache = (None, None)

    # -- schedules -----------------------------------------------------------
    def epoch_of(self, step: int) -> int:
        return (step * self.cfg.batch_size) // len(self.pairs)

    def lambda_f(self, step=None) -> float:
        c = self.cfg
        return lambda_f_schedule(self.step if step is None else step,
                                 c.lambda_f_start, c.lambda_f_end, c.lambda_f_ramp_iters)

    def learning_rates(self, step=None):
        c = self.cfg
        epoch = self.epoch_of(self.step if step is None else step)
        return (lr_schedule(epoch, c.lr_G, c.lr_decay, c.lr_decay_epochs, c.lr_floor),
                lr_schedule(epoch, c.lr_D, c.lr_decay, c.lr_decay_epochs, c.lr_floor))

    def batch_indices(self, step=None) -> np.ndarray:
        step = self.step if step is None else step
        n, bs = len(self.pairs), self.cfg.batch_size
        start = step * bs
        out = []
        while len(out) < bs:
            epoch, pos = divmod(start + len(out), n)
            if self._perm_cache[0] != epoch:
                self._perm_cache = (epoch, np.random.default_rng([self.cfg.seed, 1, epoch]).permutation(n))
            out.append(int(self._perm_cache[1][pos]))
        return np.asarray(out)

    # -- one step ------------------------------------------------------------
    def _prior_vector(self, category):
        if self.prior is None or self.cfg.no_mean_shape:
            return np.zeros(self.cfg.latent_width)
        return self.prior.vector(category)

    def _instance(self, i: int, step: int):
        pair = self.pairs[i]
        partial = pair.partial.points.astype(self.dtype)
        complete = pair.complete.points.astype(self.dtype)
        if self.cfg.random_scale_aug:
            s = np.random.default_rng([self.cfg.seed, 2, step, i]).uniform(self.cfg.scale_min, self.cfg.scale_max)
            partial, complete = (partial * s).astype(self.dtype), (complete * s).astype(self.dtype)
        return pair, partial, complete

    def _real_geometry(self, i, complete, scaled):
        if scaled:
            return self.D.prepare(complete)
        if i not in self._real_groups:
            self._real_groups[i] = self.D.prepare(complete)
        return self._real_groups[i]

    def train_step(self) -> StepReport:
        cfg = self.cfg
        step = self.step
        lam_f = self.lambda_f(step)
        lr_g, lr_d = self.learning_rates(step)
        report = StepReport(step=step + 1, epoch=self.epoch_of(step), lambda_f=lam_f, lr_G=lr_g, lr_D=lr_d)
        batch = [self._instance(i, step) + (i,) for i in self.batch_indices(step)]

        fakes = []
        try:
            for pair, partial, complete, i in batch:
                pc, pf = self.G.complete(partial, cfg.target_resolution, self._prior_vector(pair.category))
                fakes.append((pc, pf))
        except NumericFault as exc:
            exc.component = "generator forward"
            raise

        adversarial = cfg.adversarial_on
        snap_d = None
        if adversarial:
            fake_geom = [self.D.prepare(pf.data) for _, pf in fakes]
            snap_d = self.opt_D.snapshot()
            for _ in range(cfg.d_steps_per_g):
                self.D.zero_grad()
                losses = []
                for (pair, partial, complete, i), (_, pf), geom in zip(batch, fakes, fake_geom):
                    real_geom = self._real_geometry(i, complete, cfg.random_scale_aug)
                    d_fake = self.D(pf.detach(), *geom)
                    d_real = self.D(Tensor(complete), *real_geom)
                    losses.append(lsgan_discriminator(d_fake, d_real).value)
                loss_d = _mean(losses)
                self._check(loss_d, "discriminator loss", None)
                T.backward(loss_d, self.D.parameters())
                self.opt_D.step(lr_d)
            report.loss_D = loss_d.item()

        self.G.zero_grad()
        totals, parts = [], defaultdict(float)
        try:
            for j, ((pair, partial, complete, i), (pc, pf)) in enumerate(zip(batch, fakes)):
                rec = reconstruction_loss(pc, pf, complete, lam_f, cfg.rec_variant)
                gan = None
                if adversarial:
                    gan = lsgan_generator(self.D(pf, *fake_geom[j]))
                    parts["gan_G"] += gan.item()
                tot = total_loss(gan, rec, cfg.gan_weight if adversarial else 0.0, cfg.rec_weight)
                for k in ("rec_coarse", "rec_fine", "rec"):
                    parts[k] += rec.components[k]
                totals.append(tot.value)
            loss_g = _mean(totals)
            self._check(loss_g, "generator loss", snap_d)
        except NumericFault as exc:
            if snap_d is not None:
                self.opt_D.rollback(snap_d)
            exc.component = exc.component or "generator loss"
            raise
        T.backward(loss_g, self.G.parameters())
        self.opt_G.step(lr_g)

        n = len(batch)
        for k, v in parts.items():
            setattr(report, k, v / n)
        report.total = loss_g.item()
        self.step += 1
        return report

    def _check(self, loss: Tensor, component: str, snap_d):
        if not np.isfinite(loss.data).all():
            if snap_d is not None:
                self.opt_D.rollback(snap_d)
            raise NumericFault(f"non-finite {component}", component=component)

    def run(self, steps: int, trace_path=None, on_step=None) -> list[StepReport]:
        reports = []
        fh = None
        if trace_path:
            new = not os.path.exists(trace_path) or self.step == 0
            fh = open(trace_path, "w" if new else "a", encoding="utf-8")
            if new:
                fh.write("\t".join(TRACE_COLUMNS) + "\n")
        try:
            for _ in range(steps):
                r = self.train_step()
                reports.append(r)
                if fh:
                    fh.write(r.trace_line() + "\n")
                if on_step:
                    on_step(self, r)
                if self.cfg.log_every and r.step % self.cfg.log_every == 0:
                    log.info("step %d rec %.5f gan %.4f D %.4f", r.step, r.rec, r.gan_G, r.loss_D)
        finally:
            if fh:
                fh.close()
        return reports

    # -- checkpoints ---------------------------------------------------------
    def state_tensors(self) -> dict:
        out = {}
        for k, v in self.G.state_dict().items():
            out[f"G/{k}"] = v
        for k, v in self.opt_G.state().items():
            out[f"optim/G/{k}"] = v
        if self.cfg.adversarial_on:
            for k, v in self.D.state_dict().items():
                out[f"D/{k}"] = v
            for k, v in self.opt_D.state().items():
                out[f"optim/D/{k}"] = v
        if self.prior is not None:
            for k, v in self.prior.encoder.state_dict().items():
                out[f"AE/{k}"] = v
            for cat, vec in self.prior.table.items():
                out[f"prior/{cat}"] = vec
        return out

    def save(self, path) -> None:
        tensors = self.state_tensors()
        groups = sorted({k.split("/", 1)[0] for k in tensors})
        meta = {
            "kind": "pccomplete-trainer",
            "step": self.step,
            "optim_G_t": self.opt_G.t,
            "optim_D_t": self.opt_D.t,
            "config": {k: v for k, v in self.cfg.to_dict().items() if k not in RUN_LOCATION_KEYS},
            "config_hash": self.cfg.config_hash(),
            "groups": groups,
            "categories": sorted(self.prior.table) if self.prior else [],
        }
        width = 4 if self.dtype == np.float32 else 8
        ckpt.save(path, tensors, meta, width)

    def load(self, path) -> None:
        """Load a checkpoint into this trainer; nothing changes unless every
        record validates."""
        tensors, meta, _ = ckpt.load(path)
        if meta.get("kind") != "pccomplete-trainer":
            raise CheckpointError("not a trainer checkpoint")
        if meta.get("config_hash") != self.cfg.config_hash():
            raise CheckpointError("checkpoint was trained under a different configuration")
        g_state = _strip(tensors, "G/")
        d_state = _strip(tensors, "D/")
        _validate(self.G, g_state, "G")
        if self.cfg.adversarial_on:
            _validate(self.D, d_state, "D")
        opt_g = _strip(tensors, "optim/G/")
        opt_d = _strip(tensors, "optim/D/")
        _validate_opt(self.opt_G, opt_g, "optim/G")
        if self.cfg.adversarial_on:
            _validate_opt(self.opt_D, opt_d, "optim/D")
        prior = prior_from_tensors(self.cfg, tensors, meta)
        # all checks passed: mutate
        self.G.load_state_dict(g_state)
        self.opt_G.load_state(opt_g, meta["optim_G_t"])
        if self.cfg.adversarial_on:
            self.D.load_state_dict(d_state)
            self.opt_D.load_state(opt_d, meta["optim_D_t"])
        self.prior = prior
        self.step = int(meta["step"])
        self._real_groups = {}

    @classmethod
    def restore(cls, path, train_pairs, cfg: TrainConfig | None = None) -> "Trainer":
        """Rebuild a trainer from a checkpoint. ``cfg`` may change bookkeeping
        fields (steps, output paths) but must hash like the stored one."""
        if cfg is None:
            _, meta, _ = ckpt.load(path)
            cfg = config_from_mapping(meta["config"])
        trainer = cls(cfg, train_pairs)
        trainer.load(path)
        return trainer


def _strip(tensors, prefix):
    return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}


def _validate(module, state, group):
    params = module.named_parameters()
    if set(params) != set(state):
        raise CheckpointError(f"parameter group {group} does not match the model")
    for k, p in params.items():
        if state[k].shape != p.shape:
            raise CheckpointError(f"{group}/{k}: shape {state[k].shape} != {p.shape}")


def _validate_opt(opt, state, group):
    for k, p in opt.params.items():
        for slot in ("m", "v"):
            arr = state.get(f"{slot}/{k}")
            if arr is None or arr.shape != p.shape:
                raise CheckpointError(f"{group}: missing or malformed {slot} state for {k}")


def prior_from_tensors(cfg: TrainConfig, tensors, meta) -> MeanShapePrior | None:
    ae = _strip(tensors, "AE/")
    if not ae:
        return None
    enc = Encoder(cfg.generator_config(), np.random.default_rng(0))
    _validate(enc, ae, "AE")
    enc.load_state_dict(ae)
    table = {cat: np.asarray(tensors[f"prior/{cat}"], dtype=np.float64) for cat in meta.get("categories", [])}
    return MeanShapePrior(enc, table)


def checkpoint_config(path) -> TrainConfig:
    _, meta, _ = ckpt.load(path)
    if meta.get("kind") != "pccomplete-trainer":
        raise CheckpointError("not a trainer checkpoint")
    return config_from_mapping(meta["config"])


def load_model(path):
    """(config, generator, discriminator or None, prior or None) from a trainer checkpoint."""
    tensors, meta, width = ckpt.load(path)
    if meta.get("kind") != "pccomplete-trainer":
        raise CheckpointError("not a trainer checkpoint")
    cfg = config_from_mapping(meta["config"])
    T.set_default_dtype(np.float32 if width == 4 else np.float64)
    G = Generator(cfg.generator_config(), seed=cfg.seed)
    g_state = _strip(tensors, "G/")
    _validate(G, g_state, "G")
    G.load_state_dict(g_state)
    D = None
    d_state = _strip(tensors, "D/")
    if d_state:
        D = PatchDiscriminator(cfg.discriminator_config(), seed=cfg.seed + 1)
        _validate(D, d_state, "D")
        D.load_state_dict(d_state)
    return cfg, G, D, prior_from_tensors(cfg, tensors, meta)
