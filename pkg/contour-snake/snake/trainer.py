"""
Two-phase training and evaluation

Phase 1 fits EnergyNet to the analytic energy maps. Phase 2 freezes it
and trains the contour model (DCIM features, AMEM head, extreme-point
head) on jittered ground-truth boxes. Every random draw comes from a
SeedSequence keyed by (seed, stream, ...) so runs repeat bit-for-bit.
"""
import os
import json
import time
import logging
from dataclasses import dataclass, asdict

import numpy as np

from . import diffcore as dc
from .amem import AmemHead, sample_features
from .config import RunConfig
from .dcim import DCIM
from .energymap import EnergyNet, ENERGY_MAX, predict_energy
from .errors import DataIOError, NumericError, ConfigError
from .evolution import (ExtremePointHead, Instance, boxes_from_energy, boxes_from_ground_truth,
                        extreme_points, initial_contour, run_iterations, evolve)
from .geometry import align_to_ground_truth, rasterize, resample
from .losses import box_extreme_loss, charbonnier_loss, contour_loss
from .metrics import class_means, match_instances

logger = logging.getLogger(__name__)

STREAM_ENERGY_INIT = 1
STREAM_SNAKE_INIT = 2
STREAM_JITTER = 3
STREAM_SHUFFLE = 4
STREAM_EVAL = 5

ENERGY_CHECKPOINT = 'energy.gsnk'
MODEL_CHECKPOINT = 'model.gsnk'
CONFIG_FILE = 'config.json'
TRAIN_LOG = 'train-log.jsonl'
NONFINITE_DUMP = 'nonfinite-batch.json'


def stream(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


class SnakeModel(dc.Module):
    """Feature extractor plus contour and extreme-point heads

    With use_demp_dcim off the point features are raw image samples
    instead of DCIM responses over the predicted energy.
    """

    def __init__(self, pipeline, train):
        rng = stream(train.seed, STREAM_SNAKE_INIT)
        self.use_demp_dcim = train.use_demp_dcim
        if train.use_demp_dcim:
            self.dcim = DCIM(rng, pipeline.features)
            channels = pipeline.features
        else:
            self.dcim = None
            channels = 1
        self.head = AmemHead(rng, channels + 2, embed=pipeline.embed, heads=pipeline.heads,
                             conv_layers=pipeline.conv_layers, kernel_size=pipeline.kernel_size,
                             use_amem=train.use_amem)
        self.extreme = ExtremePointHead(rng, channels + 2)

    def feature_maps(self, image, energy):
        """F x H x W maps the contour samples; image and energy in 0..255"""
        if self.dcim is None:
            pixels = np.asarray(image, dtype=np.float64) / ENERGY_MAX
            return dc.Tensor(pixels[None])
        return self.dcim.forward(dc.Tensor(np.asarray(energy, dtype=np.float64)[None] / ENERGY_MAX))


class TrainingLog:
    """JSON-lines record, one line per epoch"""

    def __init__(self, path=None):
        self.path = path
        self.entries = []

    def record(self, epoch, phase, loss, lr, started):
        entry = {
            'epoch': epoch,
            'phase': phase,
            'loss': loss,
            'lr': lr,
            'wall_ms': int(round((time.perf_counter() - started) * 1000))
        }
        self.entries.append(entry)
        logger.info("%s epoch %d: loss %.6f lr %.2e", phase, epoch, loss, lr)
        if self.path:
            with open(self.path, 'a', encoding='utf-8') as fh:
                fh.write(json.dumps(entry) + '\n')


def _dump_nonfinite(out_dir, phase, epoch, names, loss):
    detail = {'phase': phase, 'epoch': epoch, 'images': names, 'loss': repr(loss)}
    if out_dir:
        path = os.path.join(out_dir, NONFINITE_DUMP)
        with open(path, 'w', encoding='utf-8') as fh:
            json.dump(detail, fh, indent=2)
        logger.error("non-finite %s loss at epoch %d, batch written to %s", phase, epoch, path)
    raise NumericError(f"non-finite {phase} loss at epoch {epoch}", f"images: {', '.join(map(str, names))}")


def _batches(order, size):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def _run_epochs(phase, epochs, params, train, sample_loss, names, shuffle_key, log, out_dir):
    """Shared mini-batch loop; sample_loss(i) returns (graph, loss) for sample i"""
    optimizer = dc.make_optimizer(train.optimizer, params, train.lr, train.momentum)
    schedule = dc.StepDecay(train.lr, train.lr_decay, train.decay_every)
    for epoch in range(epochs):
        started = time.perf_counter()
        optimizer.lr = schedule.lr_at(epoch)
        order = stream(train.seed, STREAM_SHUFFLE, shuffle_key, epoch).permutation(len(names))
        total = 0.0
        for batch in _batches(order, train.batch_size):
            optimizer.zero_grad()
            batch_names = [names[i] for i in batch]
            batch_loss = 0.0
            # accumulate in fixed sample order
            for i in batch:
                try:
                    with np.errstate(over='ignore', invalid='ignore'):
                        graph, loss = sample_loss(epoch, int(i))
                except NumericError:
                    _dump_nonfinite(out_dir, phase, epoch, batch_names, float('nan'))
                value = loss.item()
                if not np.isfinite(value):
                    _dump_nonfinite(out_dir, phase, epoch, batch_names, value)
                with np.errstate(over='ignore', invalid='ignore'):
                    graph.backward(loss)
                batch_loss += value
            with np.errstate(over='ignore', invalid='ignore'):
                optimizer.step(scale=1.0 / len(batch))
            total += batch_loss
        log.record(epoch, phase, total / max(len(names), 1), optimizer.lr, started)


def train_energy(run, phantoms, log=None, out_dir=None):
    """Fit EnergyNet to analytic energy maps with the Charbonnier loss"""
    train = run.train
    net = EnergyNet(stream(train.seed, STREAM_ENERGY_INIT))
    log = log or TrainingLog()
    names = [p.name for p in phantoms]

    def sample_loss(epoch, i):
        phantom = phantoms[i]
        with dc.Graph() as graph:
            pred = net.forward(dc.Tensor(phantom.image / ENERGY_MAX))
            loss = charbonnier_loss(pred, dc.Tensor(phantom.energy / ENERGY_MAX))
        return graph, loss

    _run_epochs('energy', train.energy_epochs, net.named_parameters(), train,
                sample_loss, names, 0, log, out_dir)
    return net


def predicted_energies(net, phantoms):
    """Clamped EnergyNet output per phantom, computed once"""
    return [predict_energy(net, p.image.astype(np.float64)).data for p in phantoms]


def instance_loss(model, maps, box, polygon, pipeline):
    """Summed per-iteration contour loss plus the extreme-point loss"""
    gt = resample(polygon, pipeline.points)
    contours = run_iterations(box, maps, model.head, pipeline)
    loss = contour_loss(contours[0], gt)
    for contour in contours[1:]:
        loss = dc.add(loss, contour_loss(contour, gt))
    start = dc.Tensor(initial_contour(box, pipeline.points, pipeline.init_shape))
    predicted = model.extreme.forward(sample_features(maps, start, box), box)
    return dc.add(loss, box_extreme_loss(predicted, extreme_points(polygon)))


def train_snake(run, phantoms, energy_net, log=None, out_dir=None):
    """Train the contour model with EnergyNet frozen"""
    pipeline, train = run.pipeline, run.train
    model = SnakeModel(pipeline, train)
    log = log or TrainingLog()
    names = [p.name for p in phantoms]
    energies = predicted_energies(energy_net, phantoms) if train.use_demp_dcim else [None] * len(phantoms)

    def sample_loss(epoch, i):
        phantom = phantoms[i]
        jitter_rng = stream(train.seed, STREAM_JITTER, epoch, i)
        boxes = boxes_from_ground_truth(phantom, train.jitter, jitter_rng)
        with dc.Graph() as graph:
            maps = model.feature_maps(phantom.image, energies[i])
            losses = [instance_loss(model, maps, box, inst.polygon, pipeline)
                      for box, inst in zip(boxes, phantom.instances)]
            loss = dc.mul(dc.sum(dc.concat([dc.reshape(part, (1,)) for part in losses])), 1.0 / len(losses))
        return graph, loss

    _run_epochs('snake', train.snake_epochs, model.named_parameters(), train,
                sample_loss, names, 1, log, out_dir)
    return model


# --- checkpoints ---

def save_model(path, energy_net, model):
    tensors = {'energy.' + k: v for k, v in energy_net.state_dict().items()}
    tensors.update({'snake.' + k: v for k, v in model.state_dict().items()})
    dc.save_checkpoint(path, tensors)


def _strip(tensors, prefix):
    return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}


def load_trained(checkpoint_path):
    """(RunConfig, EnergyNet, SnakeModel) from a model checkpoint and its sidecar config"""
    run_dir = os.path.dirname(os.path.abspath(checkpoint_path))
    run = RunConfig.load(os.path.join(run_dir, CONFIG_FILE))
    tensors = dc.load_checkpoint(checkpoint_path)
    energy_net = EnergyNet(stream(run.train.seed, STREAM_ENERGY_INIT))
    energy_net.load_state_dict(_strip(tensors, 'energy.'))
    model = SnakeModel(run.pipeline, run.train)
    model.load_state_dict(_strip(tensors, 'snake.'))
    return run, energy_net, model


def train(run, phantoms, out_dir, phase='all'):
    """Run the requested phase(s), writing config, log and checkpoints to out_dir"""
    if phase not in ('energy', 'snake', 'all'):
        raise ConfigError(f"unknown phase '{phase}', expected energy, snake or all")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"cannot create output directory: {e.strerror}", path=out_dir)
    run.save(os.path.join(out_dir, CONFIG_FILE))
    log = TrainingLog(os.path.join(out_dir, TRAIN_LOG))
    energy_path = os.path.join(out_dir, ENERGY_CHECKPOINT)

    if phase in ('energy', 'all'):
        energy_net = train_energy(run, phantoms, log, out_dir)
        dc.save_checkpoint(energy_path, energy_net.state_dict())
        logger.info("energy checkpoint written to %s", energy_path)
        if phase == 'energy':
            return energy_path
    else:
        if not os.path.isfile(energy_path):
            raise DataIOError("snake phase needs a trained energy checkpoint", path=energy_path)
        energy_net = EnergyNet(stream(run.train.seed, STREAM_ENERGY_INIT))
        energy_net.load_state_dict(dc.load_checkpoint(energy_path))

    model = train_snake(run, phantoms, energy_net, log, out_dir)
    model_path = os.path.join(out_dir, MODEL_CHECKPOINT)
    save_model(model_path, energy_net, model)
    logger.info("model checkpoint written to %s", model_path)
    return model_path


# --- evaluation ---

@dataclass
class EvalReport:
    per_class: dict
    miou: float
    mdice: float
    per_iteration_mdice: list
    images: list
    fingerprint: str
    box_source: str
    split: str = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary_table(self):
        lines = [f"{'class':>6} {'count':>6} {'IoU':>8} {'Dice':>8}"]
        for cls, scores in self.per_class.items():
            lines.append(f"{cls:>6} {scores['count']:>6} {scores['iou']:>8.4f} {scores['dice']:>8.4f}")
        lines.append(f"{'mean':>6} {'':>6} {self.miou:>8.4f} {self.mdice:>8.4f}")
        return '\n'.join(lines)


def oracle_offsets(polygon, n):
    """offsets_fn moving every vertex onto its paired ground-truth point"""
    gt = resample(polygon, n)

    def offsets(t, contour):
        return align_to_ground_truth(contour, gt) - contour

    return offsets


def evaluate(run, energy_net, model, phantoms, box_source='gt', jitter=0.0, split=None, oracle=False):
    """Evolve every instance of every phantom and score against the ground truth"""
    if box_source not in ('gt', 'energy'):
        raise ConfigError(f"unknown box source '{box_source}', expected gt or energy")
    if not phantoms:
        raise DataIOError("evaluation split is empty", path=split)
    pipeline = run.pipeline
    records, images = [], []
    per_iteration = [[] for _ in range(pipeline.iterations)]

    for index, phantom in enumerate(phantoms):
        energy = predict_energy(energy_net, phantom.image.astype(np.float64)).data
        maps = model.feature_maps(phantom.image, energy)
        if box_source == 'gt':
            boxes = boxes_from_ground_truth(phantom, jitter, stream(run.train.seed, STREAM_EVAL, index))
        else:
            boxes = boxes_from_energy(energy, run.train.energy_threshold)

        instances = []
        for i, box in enumerate(boxes):
            offsets_fn = None
            if oracle and box_source == 'gt':
                offsets_fn = oracle_offsets(phantom.instances[i].polygon, pipeline.points)
            instances.append(evolve(Instance(box), maps, model.head, pipeline, offsets_fn))

        truth = [(inst.class_id, inst.mask) for inst in phantom.instances]
        matched = match_instances([(inst.class_id, inst.mask) for inst in instances], truth)
        records.extend(matched)
        for t in range(pipeline.iterations):
            masks = [(inst.class_id, rasterize(inst.contours[t], phantom.width, phantom.height))
                     for inst in instances]
            per_iteration[t].extend(match_instances(masks, truth))
        images.append({
            'image': phantom.name,
            'instances': [{'class': r['class'], 'iou': r['iou'], 'dice': r['dice']} for r in matched]
        })

    per_class, miou, mdice = class_means(records)
    report = EvalReport(
        per_class=per_class,
        miou=miou,
        mdice=mdice,
        per_iteration_mdice=[class_means(recs)[2] for recs in per_iteration],
        images=images,
        fingerprint=run.fingerprint(),
        box_source=box_source,
        split=split
    )
    logger.info("evaluated %d images: mIoU %.4f mDice %.4f", len(phantoms), miou, mdice)
    return report
