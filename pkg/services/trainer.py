"""
End-to-end training: heatmap net and Poseprior net on every step, plus the
Branch2 contrastive path whenever the contrastive weight is positive.
"""
import csv
import math
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Union

import numpy as np
import torch
from torch.utils.data import DataLoader

from config.settings import Settings
from data.datasets import HandDataset, TrainingView
from models.estimator import HandPoseEstimator
from schemas.clip import FusionConfig
from schemas.loss import LossWeights
from schemas.prompt import Prompt
from services.checkpoint import (Checkpoint, decode_rng_state, encode_rng_state, load_checkpoint,
                                 restore_model, restore_optimizer, save_checkpoint)
from services.clip_backends import ClipBackend, load_backend
from services.clip_fusion import clip_feature
from services.errors import InvalidConfigError, NonFiniteError
from services.evaluation import evaluate_epe
from services.losses import BatchContext, batch_contrastive_loss, heatmap_loss, pose_loss, total_loss
from services.optim import HandAdam
from services.prompt_gen import sample_prompt
from utils.logging import get_logger

logger = get_logger(__name__)

CSV_FIELDS = ('step', 'epoch', 'loss_heat', 'loss_pose', 'loss_con', 'loss_total')


def _seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


class Trainer:
    def __init__(self, settings: Settings, dataset: HandDataset, validation: Optional[HandDataset] = None,
                 backend: Optional[ClipBackend] = None, write_checkpoints: bool = True):
        if len(dataset) == 0:
            raise InvalidConfigError('training dataset is empty')
        self.settings = settings
        self.weights = LossWeights(**settings.loss.dict(include={'lambda1', 'lambda2', 'lambda3'}))
        self.fusion = FusionConfig(image_ratio=settings.clip.image_ratio,
                                   normalize_inputs=settings.clip.normalize_inputs)
        self.dataset = dataset
        self.validation = validation
        self.write_checkpoints = write_checkpoints
        self.view = TrainingView(dataset, settings.data.sigma, settings.data.augment, settings.train.seed)

        torch.manual_seed(settings.train.seed)
        self.model = HandPoseEstimator.from_settings(settings.model)
        self.optimizer = HandAdam(self.model.parameters(), lr=settings.train.learning_rate,
                                  betas=settings.train.adam_betas, eps=settings.train.adam_eps)
        self.backend = None
        if self.contrastive:
            self.backend = backend or load_backend(settings.clip.backend, settings.clip.stub_seed,
                                                   settings.clip.pretrained_id)
            self.backend.freeze()

        self.epoch = 0
        self.step = 0
        self.best_epe = math.inf
        self.checkpoint_dir = Path(settings.train.checkpoint_dir)

    @property
    def contrastive(self) -> bool:
        return self.weights.lambda3 > 0

    def resume(self, checkpoint: Union[str, Path, Checkpoint]) -> 'Trainer':
        """Continue from the epoch boundary stored in `checkpoint`."""
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = load_checkpoint(checkpoint)
        restore_model(self.model, checkpoint)
        restore_optimizer(self.optimizer, checkpoint)
        self.epoch = checkpoint.epoch
        self.step = checkpoint.step
        self.best_epe = checkpoint.metadata.get('best_epe') or math.inf
        if 'rng_state' in checkpoint.metadata:
            torch.set_rng_state(decode_rng_state(checkpoint.metadata['rng_state']))
        logger.info('resumed', extra={'epoch': self.epoch, 'step': self.step})
        return self

    def prompts(self, epoch: int, step: int, batch_size: int) -> List[Prompt]:
        seed = self.settings.train.seed
        policy = self.settings.train.prompt_policy
        if policy == 'per-sample':
            return [sample_prompt(_seed(seed, epoch, step, i)) for i in range(batch_size)]
        if policy == 'per-batch':
            return [sample_prompt(_seed(seed, epoch, step))] * batch_size
        return [sample_prompt(_seed(seed, epoch))] * batch_size

    def batches(self, epoch: int) -> Iterator[Dict[str, torch.Tensor]]:
        generator = torch.Generator().manual_seed(_seed(self.settings.train.seed, epoch))
        order = torch.randperm(len(self.view), generator=generator).tolist()
        size = self.settings.train.batch_size
        chunks = [order[i:i + size] for i in range(0, len(order), size)]
        # a lone sample has no negative to mine
        if self.contrastive and len(chunks) > 1 and len(chunks[-1]) == 1:
            chunks[-2].extend(chunks.pop())
        self.view.epoch = epoch
        return iter(DataLoader(self.view, batch_sampler=chunks, num_workers=self.settings.train.num_workers))

    def losses(self, batch: Dict[str, torch.Tensor], epoch: int, step: int) -> Dict[str, torch.Tensor]:
        x = batch['image'].to(self.model.dtype)
        clip = None
        if self.contrastive:
            with torch.no_grad():
                clip = clip_feature(x, self.prompts(epoch, step, x.shape[0]), self.backend, self.fusion,
                                    self.settings.clip.variant).to(self.model.dtype)
        out = self.model.forward_train(x, clip)

        loss = self.settings.loss
        visible = batch['visible']
        heat = heatmap_loss(out['heatmaps'], batch['heatmaps'], visible, loss.reduction)
        if self.settings.model.stage_loss:
            for stage in out['stage_heatmaps'][:-1]:
                heat = heat + heatmap_loss(stage, batch['heatmaps'], visible, loss.reduction)
        pose = pose_loss(out['pose'], batch['joints3d'], loss.reduction)
        con = None
        if self.contrastive:
            ctx = BatchContext(out['heatmaps'], batch['heatmaps'], out['encodings_plain'], out['encodings_fused'])
            con = batch_contrastive_loss(ctx, loss.margin, loss.mining_metric, loss.clamp_mode)
        total = total_loss(heat, pose, con, self.weights)
        return {'heat': heat, 'pose': pose, 'con': con, 'total': total}

    def train_step(self, batch: Dict[str, torch.Tensor], epoch: int) -> Dict[str, float]:
        self.model.train()
        try:
            terms = self.losses(batch, epoch, self.step)
            self.optimizer.zero_grad(set_to_none=True)
            terms['total'].backward()
            self.optimizer.step()
        except NonFiniteError as e:
            self._dump_nonfinite(e, batch, epoch)
            raise
        self.step += 1
        return {
            'step': self.step,
            'epoch': epoch,
            'loss_heat': terms['heat'].item(),
            'loss_pose': terms['pose'].item(),
            'loss_con': terms['con'].item() if terms['con'] is not None else 0.0,
            'loss_total': terms['total'].item(),
        }

    def _dump_nonfinite(self, error: NonFiniteError, batch: Dict[str, torch.Tensor], epoch: int) -> None:
        snapshot = dict(error.snapshot, epoch=epoch, step=self.step, indices=batch['index'].tolist())
        error.snapshot = snapshot
        logger.error('non-finite value, training halted', extra=snapshot)
        if self.write_checkpoints:
            self._save('nonfinite.ckpt', extra={'snapshot': snapshot})

    def _metadata(self) -> dict:
        return {
            'epoch': self.epoch,
            'step': self.step,
            'best_epe': None if math.isinf(self.best_epe) else self.best_epe,
            'rng_state': encode_rng_state(torch.get_rng_state()),
            'settings': self.settings.dict(),
        }

    def _save(self, name: str, extra: Optional[dict] = None) -> Path:
        meta = self._metadata()
        meta.update(extra or {})
        return save_checkpoint(self.checkpoint_dir / name, self.model, self.optimizer, meta)

    def _csv(self) -> Optional[Path]:
        return self.settings.train.log_csv

    def _log_rows(self, rows: List[Dict[str, float]]) -> None:
        path = self._csv()
        if path is None:
            return
        path = Path(path)
        fresh = not path.exists()
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'a', newline='', encoding='utf-8') as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator='\n')
            if fresh:
                writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

    def train(self) -> Optional[Checkpoint]:
        """Run the remaining epochs; returns the final checkpoint when checkpoints are written."""
        epochs = self.settings.train.epochs
        while self.epoch < epochs:
            epoch = self.epoch
            rows = []
            for batch in self.batches(epoch):
                row = self.train_step(batch, epoch)
                logger.debug('step', extra=row)
                rows.append(row)
            self._log_rows(rows)
            self.epoch = epoch + 1

            record = {'epoch': self.epoch, 'loss_total': float(np.mean([r['loss_total'] for r in rows]))}
            improved = False
            if self.validation is not None and len(self.validation):
                record['val_epe_mm'] = evaluate_epe(self.model, self.validation).epe_mm
                improved = record['val_epe_mm'] < self.best_epe
                self.best_epe = min(self.best_epe, record['val_epe_mm'])
            logger.info('epoch done', extra=record)

            if self.write_checkpoints:
                self._save(f'epoch_{self.epoch:03d}.ckpt')
                self._save('last.ckpt')
                if improved:
                    self._save('best.ckpt')
        if self.write_checkpoints:
            return load_checkpoint(self.checkpoint_dir / 'last.ckpt')
        return None


def train(settings: Settings, dataset: HandDataset, validation: Optional[HandDataset] = None,
          backend: Optional[ClipBackend] = None) -> Checkpoint:
    return Trainer(settings, dataset, validation, backend).train()
