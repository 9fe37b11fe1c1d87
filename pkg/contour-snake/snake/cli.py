"""
Command-line entry point

Exit codes: 0 success, 2 usage / config / path error, 3 numeric failure.
"""
import os
import sys
import json
import shutil
import logging
import argparse
from pathlib import PurePosixPath

import numpy as np

from . import diffcore as dc
from .config import RunConfig, active_config
from .dataset import SPLITS, generate_dataset, load_phantom, load_split
from .energymap import EnergyNet, predict_energy, write_energy_pgm
from .errors import ConfigError, DataIOError, SnakeError
from .evolution import Instance, boxes_from_energy, boxes_from_ground_truth, evolve, instances_to_json
from .log import configure_logging
from .pnm import draw_overlay, read_pgm, write_ppm
from . import trainer

logger = logging.getLogger(__name__)

ITERATION_COLOURS = [(255, 0, 0), (255, 255, 0), (0, 255, 0)]
GROUND_TRUTH_COLOUR = (0, 0, 255)
ABLATION_GRID = ((False, False), (False, True), (True, False), (True, True))


def _size(text):
    try:
        height, width = (int(v) for v in text.lower().split('x'))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 128x128, got '{text}'")
    if height < 16 or width < 16:
        raise argparse.ArgumentTypeError("size must be at least 16x16")
    return height, width


def _int_list(text):
    try:
        values = [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got '{text}'")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def build_parser():
    parser = argparse.ArgumentParser(prog='snake', description='Contour evolution segmentation on synthetic phantoms')
    profile = active_config()
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-data', help='generate a synthetic phantom dataset')
    p.add_argument('--out', default=profile.DATA_DIR)
    p.add_argument('--seed', type=int, default=profile.SEED)
    p.add_argument('--count', type=int, default=300)
    p.add_argument('--size', type=_size, default=(128, 128), help='HxW')

    p = sub.add_parser('train', help='train the energy net and/or the contour model')
    p.add_argument('--config')
    p.add_argument('--data', default=profile.DATA_DIR)
    p.add_argument('--out', default=profile.OUT_DIR)
    p.add_argument('--phase', choices=('energy', 'snake', 'all'), default='all')
    p.add_argument('--seed', type=int)

    p = sub.add_parser('eval', help='score a trained model on a split')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--data', default=profile.DATA_DIR)
    p.add_argument('--split', choices=SPLITS, default='test')
    p.add_argument('--boxes', choices=('gt', 'energy'), default='gt')
    p.add_argument('--jitter', type=float, default=0.0)
    p.add_argument('--oracle', action='store_true', help='move vertices onto paired ground truth (upper bound)')

    p = sub.add_parser('ablate', help='train and score the 2x2 component grid')
    p.add_argument('--config')
    p.add_argument('--data', default=profile.DATA_DIR)
    p.add_argument('--out', default=profile.OUT_DIR)

    p = sub.add_parser('sweep', help='retrain and score over point or iteration counts')
    p.add_argument('--config')
    p.add_argument('--data', default=profile.DATA_DIR)
    p.add_argument('--out', default=profile.OUT_DIR)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument('--points', type=_int_list)
    group.add_argument('--iterations', type=_int_list)

    p = sub.add_parser('infer', help='segment one image')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--image', required=True)
    p.add_argument('--overlay')
    p.add_argument('--annotations', help='annotation JSON; boxes and blue outline come from it')
    p.add_argument('--history', action='store_true', help='include every iteration in the JSON')

    p = sub.add_parser('export-energy', help='write the predicted energy map as PGM')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--image', required=True)
    p.add_argument('--out', required=True)
    return parser


def _load_run(args):
    run = RunConfig.load(args.config) if args.config else RunConfig().validate()
    if getattr(args, 'seed', None) is not None:
        run.with_seed(args.seed)
    run.data_dir = args.data
    run.out_dir = args.out
    return run.validate()


def cmd_gen_data(args):
    height, width = args.size
    if height % 4 or width % 4:
        logger.warning("size %dx%d is not divisible by 4; EnergyNet cannot run on it", height, width)
    path = generate_dataset(args.out, seed=args.seed, count=args.count, height=height, width=width)
    print(path)
    return 0


def cmd_train(args):
    run = _load_run(args)
    phantoms = load_split(args.data, 'train')
    path = trainer.train(run, phantoms, args.out, phase=args.phase)
    print(path)
    return 0


def cmd_eval(args):
    run, energy_net, model = trainer.load_trained(args.checkpoint)
    phantoms = load_split(args.data, args.split)
    report = trainer.evaluate(run, energy_net, model, phantoms, box_source=args.boxes,
                              jitter=args.jitter, split=args.split, oracle=args.oracle)
    print(report.to_json())
    print(report.summary_table(), file=sys.stderr)
    return 0


def _train_and_score(run, train_set, test_set, out_dir, energy_dir):
    """Snake phase on top of a shared energy checkpoint, then test-split scores"""
    os.makedirs(out_dir, exist_ok=True)
    shutil.copyfile(os.path.join(energy_dir, trainer.ENERGY_CHECKPOINT),
                    os.path.join(out_dir, trainer.ENERGY_CHECKPOINT))
    path = trainer.train(run, train_set, out_dir, phase='snake')
    run, energy_net, model = trainer.load_trained(path)
    report = trainer.evaluate(run, energy_net, model, test_set, box_source='gt',
                              jitter=run.train.jitter, split='test')
    with open(os.path.join(out_dir, 'report.json'), 'w', encoding='utf-8') as fh:
        fh.write(report.to_json() + '\n')
    return report


def _shared_energy(run, train_set, out_dir):
    energy_dir = os.path.join(out_dir, 'energy')
    trainer.train(run, train_set, energy_dir, phase='energy')
    return energy_dir


def _flag(value):
    return 'on' if value else 'off'


def cmd_ablate(args):
    base = _load_run(args)
    train_set = load_split(args.data, 'train')
    test_set = load_split(args.data, 'test')
    energy_dir = _shared_energy(base, train_set, args.out)

    rows = []
    for demp, amem in ABLATION_GRID:
        run = RunConfig.from_dict(base.to_dict())
        run.train.use_demp_dcim = demp
        run.train.use_amem = amem
        tag = f"demp-{_flag(demp)}_amem-{_flag(amem)}"
        report = _train_and_score(run, train_set, test_set, os.path.join(args.out, tag), energy_dir)
        rows.append({'use_demp_dcim': demp, 'use_amem': amem, 'miou': report.miou, 'mdice': report.mdice})

    with open(os.path.join(args.out, 'ablation.json'), 'w', encoding='utf-8') as fh:
        json.dump(rows, fh, indent=2)
    print(f"{'DEMP&DCIM':<10} {'AMEM':<6} {'mIoU':>8} {'mDice':>8}")
    for row in rows:
        print(f"{_flag(row['use_demp_dcim']):<10} {_flag(row['use_amem']):<6} {row['miou']:>8.4f} {row['mdice']:>8.4f}")
    return 0


def cmd_sweep(args):
    base = _load_run(args)
    key, values = ('points', args.points) if args.points else ('iterations', args.iterations)
    train_set = load_split(args.data, 'train')
    test_set = load_split(args.data, 'test')
    energy_dir = _shared_energy(base, train_set, args.out)

    rows = []
    for value in values:
        run = RunConfig.from_dict(base.to_dict())
        setattr(run.pipeline, key, value)
        run.validate()
        report = _train_and_score(run, train_set, test_set, os.path.join(args.out, f"{key}-{value}"), energy_dir)
        rows.append({key: value, 'miou': report.miou, 'mdice': report.mdice})

    with open(os.path.join(args.out, f"sweep-{key}.json"), 'w', encoding='utf-8') as fh:
        json.dump(rows, fh, indent=2)
    print(f"{key:<10} {'mIoU':>8} {'mDice':>8}")
    for row in rows:
        print(f"{row[key]:<10} {row['miou']:>8.4f} {row['mdice']:>8.4f}")
    return 0


def cmd_infer(args):
    run, energy_net, model = trainer.load_trained(args.checkpoint)
    image = read_pgm(args.image)
    energy = predict_energy(energy_net, image.astype(np.float64)).data
    maps = model.feature_maps(image, energy)

    phantom = None
    if args.annotations:
        phantom = load_phantom(_annotation_root(args.annotations), args.annotations)
        boxes = boxes_from_ground_truth(phantom, 0.0, None)
    else:
        boxes = boxes_from_energy(energy, run.train.energy_threshold)

    instances = [evolve(Instance(box), maps, model.head, run.pipeline) for box in boxes]
    print(json.dumps(instances_to_json(instances, with_history=args.history)))

    if args.overlay:
        lines = []
        for inst in instances:
            for t, contour in enumerate(inst.contours):
                lines.append((contour, ITERATION_COLOURS[min(t, len(ITERATION_COLOURS) - 1)]))
        if phantom is not None:
            lines.extend((inst.polygon, GROUND_TRUTH_COLOUR) for inst in phantom.instances)
        write_ppm(args.overlay, draw_overlay(image, lines))
    return 0


def _annotation_root(annotation_path):
    """Dataset root the annotation's relative image path resolves against"""
    with open(annotation_path, 'r', encoding='utf-8') as fh:
        relative = json.load(fh)['image']
    root = os.path.dirname(os.path.abspath(annotation_path))
    for _ in range(len(PurePosixPath(relative).parts) - 1):
        root = os.path.dirname(root)
    return root


def cmd_export_energy(args):
    tensors = dc.load_checkpoint(args.checkpoint)
    if any(name.startswith('energy.') for name in tensors):
        tensors = {k[len('energy.'):]: v for k, v in tensors.items() if k.startswith('energy.')}
    net = EnergyNet(np.random.default_rng(0))
    net.load_state_dict(tensors)
    image = read_pgm(args.image)
    energy = predict_energy(net, image.astype(np.float64)).data
    write_energy_pgm(energy, args.out)
    print(args.out)
    return 0


COMMANDS = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'eval': cmd_eval,
    'ablate': cmd_ablate,
    'sweep': cmd_sweep,
    'infer': cmd_infer,
    'export-energy': cmd_export_energy,
}


def main(argv=None):
    """Parse arguments, run one command, return its exit code"""
    configure_logging(active_config())
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SnakeError as e:
        logger.error(str(e))
        return e.exit_code
    except OSError as e:
        logger.error(str(DataIOError(e.strerror, path=e.filename)))
        return DataIOError.exit_code
    except json.JSONDecodeError as e:
        logger.error(str(ConfigError(f"invalid JSON: {e}")))
        return ConfigError.exit_code
