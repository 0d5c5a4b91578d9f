"""Training loop, evaluation protocol, ablation harness and reports.

A run is fully determined by its config: parameter init, data order and
negative sampling draw from independent child streams of the run seed, and
every emitted file (report.csv, model.bin, bank.json) is bit-reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bank import MemoryBank, contrastive_loss
from .benchmark import VOCAB_SIZE, Scene, metric_f, metric_j, video_iou
from .config import TrainConfig
from .decoder import predict_video_masks
from .language import TaggedExpression
from .losses import frame_loss, video_loss
from .matching import hungarian
from .model import MotionSegModel, save_model
from .tensor import Tensor, take


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass
class EvalMetrics:
    j: float
    f: float
    jf: float
    ident_acc: float
    probe_acc: float  # nan when the split has no probe scenes
    token_groups: dict = field(default_factory=dict, repr=False)


@dataclass
class RunResult:
    rows: list[dict]
    final: EvalMetrics
    margin: float
    config: TrainConfig


def separation_margin(token_groups: dict) -> float:
    """Mean cosine similarity of same-object token pairs minus mean cosine
    similarity of different-object pairs."""
    groups = [np.stack(v) for v in token_groups.values() if len(v) > 0]
    if len(groups) < 2 or not any(len(g) >= 2 for g in groups):
        raise ValueError("separation margin needs >=2 objects and an object with >=2 tokens")
    intra, inter = [], []
    for gi, a in enumerate(groups):
        for i in range(len(a)):
            for j in range(i + 1, len(a)):
                intra.append(float(a[i] @ a[j]))
        for b in groups[gi + 1:]:
            inter.extend(float(x @ y) for x in a for y in b)
    return float(np.mean(intra) - np.mean(inter))


class Trainer:
    def __init__(self, config: TrainConfig, train_scenes: list[Scene], val_scenes: list[Scene]):
        config.validate()
        self.cfg = config
        self.train_scenes = train_scenes
        self.val_scenes = val_scenes
        init_seed, order_seed, negative_seed = np.random.SeedSequence(config.seed).spawn(3)
        self.order_rng = np.random.default_rng(order_seed)
        self.negative_rng = np.random.default_rng(negative_seed)
        self.model = MotionSegModel(config, VOCAB_SIZE, np.random.default_rng(init_seed))

        # one bank slot per distinct target object in the training set
        self.slot_ids: dict[tuple[int, int], int] = {}
        categories, videos = [], []
        for video_idx, scene in enumerate(train_scenes):
            for expr in scene.expressions:
                for obj_idx in expr.target_ids:
                    key = (scene.seed, obj_idx)
                    if key not in self.slot_ids:
                        self.slot_ids[key] = len(categories)
                        categories.append(scene.objects[obj_idx].category)
                        videos.append(video_idx)
        self.bank = MemoryBank(categories or [0], videos or [0], config.channels)
        if not categories:
            self.bank.initialized[:] = False

        self.velocity = {p.name: np.zeros_like(p.data) for p in self.model.params}
        self.pairs = [
            (si, ei)
            for si, scene in enumerate(train_scenes)
            for ei in range(len(scene.expressions))
        ]

    # -- losses -----------------------------------------------------------------

    def _losses_and_anchor(self, scene: Scene, expr: TaggedExpression):
        cfg = self.cfg
        out = self.model.forward(scene.features, expr)
        lf = frame_loss(out, scene.masks, cfg.lambda_cls, cfg.lambda_mask, cfg.lambda_dice)
        ml = video_loss(out, scene.target_masks(expr), cfg.lambda_cls, cfg.lambda_mask,
                        cfg.lambda_dice)
        anchor, pos_slot, slots = None, None, []
        if cfg.contrastive_enabled and ml.matches and expr.target_ids:
            keyed = [self.slot_ids.get((scene.seed, o)) for o in expr.target_ids]
            if None not in keyed:
                slots = keyed
                rows = take(out.video.tokens, np.array([m[0] for m in ml.matches]), axis=0)
                anchor = self.model.projector.project(rows.mean(axis=0))
                best = min(ml.matches, key=lambda m: m[2])
                pos_slot = slots[best[1]]
        return out, lf, ml, anchor, pos_slot, slots

    def frozen_step_loss(self, scene: Scene, expr: TaggedExpression, step: int,
                         negatives: np.ndarray | None = None) -> Tensor:
        """The training objective at `step` with the bank held constant and
        negatives supplied by the caller (used by gradient checks)."""
        _, lf, ml, anchor, pos_slot, _ = self._losses_and_anchor(scene, expr)
        total = lf + ml.loss
        if anchor is not None and step >= self.cfg.warmup_steps and negatives is not None \
                and len(negatives) and self.bank.initialized[pos_slot]:
            con = contrastive_loss(anchor, self.bank.vectors[pos_slot].copy(),
                                   negatives, self.cfg.tau)
            total = total + self.cfg.lambda_contrastive * con
        return total

    def train_step(self, scene: Scene, expr: TaggedExpression, step: int) -> dict:
        cfg = self.cfg
        self.model.zero_grad()
        _, lf, ml, anchor, pos_slot, slots = self._losses_and_anchor(scene, expr)
        total = lf + ml.loss
        con_value = 0.0
        if anchor is not None:
            vec = anchor.data.copy()
            for slot in slots:
                self.bank.update(slot, vec, cfg.ema_beta)
            if step >= cfg.warmup_steps and cfg.n_negatives > 0:
                negatives = self.bank.sample_negatives(
                    pos_slot, cfg.n_negatives, self.negative_rng, exclude=slots)
                if negatives.size:
                    con = contrastive_loss(anchor, self.bank.vectors[pos_slot].copy(),
                                           self.bank.vectors[negatives].copy(), cfg.tau)
                    con_value = con.item()
                    total = total + cfg.lambda_contrastive * con
        if not np.isfinite(total.data):
            raise TrainingDiverged(step)
        total.backward()
        scale = 1.0
        if cfg.max_grad_norm > 0:
            norm = np.sqrt(sum(float((p.grad * p.grad).sum()) for p in self.model.params))
            if norm > cfg.max_grad_norm:
                scale = cfg.max_grad_norm / norm
        for p in self.model.params:
            v = self.velocity[p.name]
            v *= cfg.momentum
            v += p.grad * scale
            p.tensor.data -= cfg.learning_rate * v
        return {
            "total": total.item(),
            "frame": lf.item(),
            "video": ml.loss.item(),
            "contrastive": con_value,
        }

    # -- evaluation ----------------------------------------------------------------

    def _score_scene(self, pred_masks: np.ndarray, gt_masks: np.ndarray):
        n_pred, n_gt = len(pred_masks), len(gt_masks)
        if n_pred == 0 and n_gt == 0:
            return 1.0, 1.0, True
        n = max(n_pred, n_gt)
        iou = np.zeros((n_pred, n_gt))
        for s in range(n_pred):
            for k in range(n_gt):
                iou[s, k] = video_iou(pred_masks[s], gt_masks[k])
        costs = np.zeros((n, n))
        costs[:n_pred, :n_gt] = -iou
        perm = hungarian(costs)
        js, fs, correct = [], [], True
        for i in range(n):
            k = perm[i]
            if i < n_pred and k < n_gt:
                js.append(metric_j(pred_masks[i], gt_masks[k]))
                fs.append(metric_f(pred_masks[i], gt_masks[k]))
                if iou[i, k] < 0.5:
                    correct = False
            else:
                js.append(0.0)
                fs.append(0.0)
                correct = False
        return float(np.mean(js)), float(np.mean(fs)), correct

    def evaluate(self, scenes: list[Scene] | None = None) -> EvalMetrics:
        scenes = scenes if scenes is not None else self.val_scenes
        js, fs, idents = [], [], []
        probe_idents = []
        token_groups: dict[tuple[int, int], list[np.ndarray]] = {}
        for scene in scenes:
            for expr in scene.expressions:
                out = self.model.forward(scene.features, expr)
                probs, selected = predict_video_masks(out.video, out.mask_features,
                                                      self.cfg.threshold)
                binary = probs.data > 0.5
                gt = scene.target_masks(expr).astype(bool)
                j, f, ident = self._score_scene(binary[selected], gt)
                js.append(j)
                fs.append(f)
                idents.append(ident)
                if scene.probe:
                    probe_idents.append(ident)
                for pos, obj_idx in enumerate(expr.target_ids):
                    ious = [video_iou(binary[q], gt[pos]) for q in range(binary.shape[0])]
                    best_q = int(np.argmax(ious))
                    projected = self.model.projector.project(
                        Tensor(out.video.tokens.data[best_q].copy()))
                    token_groups.setdefault((scene.seed, obj_idx), []).append(projected.data.copy())
        j, f = float(np.mean(js)), float(np.mean(fs))
        return EvalMetrics(
            j=j,
            f=f,
            jf=(j + f) / 2.0,
            ident_acc=float(np.mean(idents)),
            probe_acc=float(np.mean(probe_idents)) if probe_idents else float("nan"),
            token_groups=token_groups,
        )

    # -- full run ---------------------------------------------------------------------

    def run(self, out_dir=None, quiet: bool = True) -> RunResult:
        cfg = self.cfg
        order: list[tuple[int, int]] = []
        while len(order) < cfg.steps:
            order.extend(self.pairs[i] for i in self.order_rng.permutation(len(self.pairs)))
        rows: list[dict] = []
        sums = dict.fromkeys(("total", "frame", "video", "contrastive"), 0.0)
        count = 0
        final: EvalMetrics | None = None
        for step in range(cfg.steps):
            si, ei = order[step]
            scene = self.train_scenes[si]
            parts = self.train_step(scene, scene.expressions[ei], step)
            for key in sums:
                sums[key] += parts[key]
            count += 1
            if (step + 1) % cfg.eval_every == 0 or step == cfg.steps - 1:
                final = self.evaluate()
                row = {
                    "step": step + 1,
                    "loss_total": sums["total"] / count,
                    "loss_frame": sums["frame"] / count,
                    "loss_video": sums["video"] / count,
                    "loss_contrastive": sums["contrastive"] / count,
                    "j": final.j,
                    "f": final.f,
                    "jf": final.jf,
                    "ident_acc": final.ident_acc,
                    "probe_acc": final.probe_acc,
                }
                rows.append(row)
                sums = dict.fromkeys(sums, 0.0)
                count = 0
                if not quiet:
                    print(f"step {row['step']:6d}  loss {row['loss_total']:.4f}  "
                          f"J&F {row['jf']:.4f}  ident {row['ident_acc']:.4f}")
        try:
            margin = separation_margin(final.token_groups)
        except ValueError:
            margin = float("nan")
        result = RunResult(rows=rows, final=final, margin=margin, config=cfg)
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            write_report_csv(rows, out_dir / "report.csv")
            save_model(self.model, out_dir / "model.bin")
            self.bank.save_json(out_dir / "bank.json")
            cfg.to_json(out_dir / "config.json")
            with open(out_dir / "summary.json", "w") as fh:
                import json

                json.dump({
                    "j": final.j, "f": final.f, "jf": final.jf,
                    "ident_acc": final.ident_acc, "probe_acc": final.probe_acc,
                    "separation_margin": margin,
                }, fh, indent=2, sort_keys=True)
        return result


REPORT_COLUMNS = ("step", "loss_total", "loss_frame", "loss_video", "loss_contrastive",
                  "j", "f", "jf", "ident_acc", "probe_acc")


def write_report_csv(rows: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in REPORT_COLUMNS) + "\n")


# -- ablation harness -----------------------------------------------------------------


def axis_variants(base: TrainConfig, axis: str) -> list[tuple[str, TrainConfig]]:
    if axis == "components":
        out = []
        for index, (ds, hmp, cl) in enumerate(itertools.product((False, True), repeat=3)):
            label = "+".join(n for n, on in (("ds", ds), ("hmp", hmp), ("cl", cl)) if on) or "none"
            out.append((label, base.replace(decouple_sentence=ds, hmp_enabled=hmp,
                                            contrastive_enabled=cl)))
        return out
    if axis == "input-query":
        return [
            (variant, base.replace(decouple_sentence=True, query_variant=variant))
            for variant in ("sentence_only", "ds_no_sentence", "ds_no_query", "ds")
        ]
    if axis == "nh":
        return [(str(n), base.replace(hmp_enabled=True, hmp_stages=n)) for n in (0, 1, 2, 3)]
    if axis == "nn":
        return [(str(n), base.replace(contrastive_enabled=True, n_negatives=n))
                for n in (0, 10, 100, 200)]
    if axis == "hungarian":
        return [("off", base.replace(hungarian_enabled=False)),
                ("on", base.replace(hungarian_enabled=True))]
    raise ValueError(f"unknown ablation axis {axis!r}")


def ablate(base: TrainConfig, axis: str, seeds: int, train_scenes: list[Scene],
           val_scenes: list[Scene], cache: dict | None = None,
           quiet: bool = True) -> list[dict]:
    """Run every variant of `axis` over `seeds` run seeds; identical resolved
    configs share one run via `cache`."""
    cache = cache if cache is not None else {}
    rows = []
    for label, cfg in axis_variants(base, axis):
        for seed in range(seeds):
            seeded = cfg.replace(seed=seed)
            key = (seeded.canonical_key(),)
            if key not in cache:
                if not quiet:
                    print(f"[ablate] {axis}/{label} seed {seed}")
                cache[key] = Trainer(seeded, train_scenes, val_scenes).run()
            result = cache[key]
            rows.append({
                "axis": axis,
                "variant": label,
                "seed": seed,
                "j": result.final.j,
                "f": result.final.f,
                "jf": result.final.jf,
                "ident_acc": result.final.ident_acc,
                "probe_acc": result.final.probe_acc,
                "margin": result.margin,
            })
    return rows


def write_ablation_csv(rows: list[dict], path) -> None:
    columns = ("axis", "variant", "seed", "j", "f", "jf", "ident_acc", "probe_acc", "margin")
    summary: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        summary.setdefault((row["axis"], row["variant"]), []).append(row)
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in columns) + "\n")
        fh.write("# mean +/- std over seeds\n")
        for (axis, variant), group in summary.items():
            jf = np.array([g["jf"] for g in group])
            ident = np.array([g["ident_acc"] for g in group])
            fh.write(f"# {axis}/{variant}: jf={jf.mean():.4f}+/-{jf.std():.4f} "
                     f"ident={ident.mean():.4f}+/-{ident.std():.4f}\n")
