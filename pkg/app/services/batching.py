"""
Muestreo de lotes: fuente balanceada por clase y objetivo uniforme con rebarajado
"""
from typing import Iterator, List, Optional

import torch
from torch.utils.data import Sampler

from app.core.logger import get_logger
from app.services import ConfigurationError

logger = get_logger("batching")


class BalancedBatchSampler(Sampler[List[int]]):
    """
    Lotes de la fuente con conteos por clase que difieren en a lo sumo 1.
    Cada clase recorre su propio orden barajado y se rebaraja al agotarse.
    """

    def __init__(self,
                 labels: torch.Tensor,
                 batch_size: int,
                 seed: int,
                 num_classes: Optional[int] = None,
                 batches_per_epoch: Optional[int] = None):
        if batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        self.labels = labels.cpu().long()
        self.batch_size = batch_size
        self.seed = seed
        self.num_classes = num_classes or int(self.labels.max().item()) + 1

        self._class_pools = []
        for k in range(self.num_classes):
            pool = torch.nonzero(self.labels == k, as_tuple=False).flatten()
            if pool.numel() == 0:
                raise ConfigurationError(f"Class {k} is absent from the source set")
            self._class_pools.append(pool)

        self.batches_per_epoch = batches_per_epoch or max(1, len(self.labels) // batch_size)
        self._generator = torch.Generator().manual_seed(seed)
        self._orders = [self._shuffle(pool) for pool in self._class_pools]
        self._cursors = [0] * self.num_classes

    def _shuffle(self, pool: torch.Tensor) -> torch.Tensor:
        return pool[torch.randperm(pool.numel(), generator=self._generator)]

    def _take(self, k: int, count: int) -> List[int]:
        taken = []
        while len(taken) < count:
            if self._cursors[k] >= self._orders[k].numel():
                self._orders[k] = self._shuffle(self._class_pools[k])
                self._cursors[k] = 0
            take = min(count - len(taken), self._orders[k].numel() - self._cursors[k])
            start = self._cursors[k]
            taken.extend(self._orders[k][start:start + take].tolist())
            self._cursors[k] += take
        return taken

    def __iter__(self) -> Iterator[List[int]]:
        base, remainder = divmod(self.batch_size, self.num_classes)
        for _ in range(self.batches_per_epoch):
            # las clases que reciben una muestra extra rotan al azar
            extra = set(torch.randperm(self.num_classes, generator=self._generator)[:remainder].tolist())
            batch = []
            for k in range(self.num_classes):
                batch.extend(self._take(k, base + (1 if k in extra else 0)))
            order = torch.randperm(len(batch), generator=self._generator)
            yield [batch[i] for i in order.tolist()]

    def __len__(self) -> int:
        return self.batches_per_epoch


class ShuffledBatchSampler(Sampler[List[int]]):
    """Lotes uniformes sin reemplazo; rebaraja en cada pasada completa"""

    def __init__(self, n_samples: int, batch_size: int, seed: int,
                 batches_per_epoch: Optional[int] = None):
        if n_samples < 1:
            raise ConfigurationError("Cannot sample batches from an empty set")
        self.n_samples = n_samples
        self.batch_size = min(batch_size, n_samples)
        self.batches_per_epoch = batches_per_epoch or max(1, n_samples // self.batch_size)
        self._generator = torch.Generator().manual_seed(seed)
        self._order = torch.randperm(n_samples, generator=self._generator)
        self._cursor = 0

    def __iter__(self) -> Iterator[List[int]]:
        for _ in range(self.batches_per_epoch):
            if self._cursor + self.batch_size > self.n_samples:
                self._order = torch.randperm(self.n_samples, generator=self._generator)
                self._cursor = 0
            batch = self._order[self._cursor:self._cursor + self.batch_size].tolist()
            self._cursor += self.batch_size
            yield batch

    def __len__(self) -> int:
        return self.batches_per_epoch


def balanced_source_batches(labels: torch.Tensor, batch_size: int, seed: int,
                            num_classes: Optional[int] = None,
                            batches_per_epoch: Optional[int] = None) -> BalancedBatchSampler:
    """Factory function para el muestreador balanceado de la fuente"""
    sampler = BalancedBatchSampler(labels, batch_size, seed, num_classes, batches_per_epoch)
    logger.debug("Balanced sampler ready",
                 batch_size=batch_size,
                 num_classes=sampler.num_classes,
                 batches_per_epoch=len(sampler))
    return sampler


def sequential_batches(n_samples: int, batch_size: int) -> Iterator[List[int]]:
    """Recorrido ordenado para evaluación"""
    for start in range(0, n_samples, batch_size):
        yield list(range(start, min(start + batch_size, n_samples)))
