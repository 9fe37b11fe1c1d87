"""
Configuration for the contour snake pipeline

Environment profiles (logging, default paths) follow the usual
Config / DevelopmentConfig / ProductionConfig / TestingConfig split;
run parameters live in dataclasses loaded from JSON config files.
"""
import os
import json
import hashlib
from dataclasses import dataclass, field, fields, asdict

from dotenv import load_dotenv

from .errors import ConfigError, DataIOError

load_dotenv()


class Config:
    """Base configuration class"""

    # Paths
    DATA_DIR = os.getenv('SNAKE_DATA_DIR', 'data')
    OUT_DIR = os.getenv('SNAKE_OUT_DIR', 'runs')
    SEED = int(os.getenv('SNAKE_SEED', 42))

    # Logging Configuration
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
    LOG_FILE = os.getenv('LOG_FILE', 'logs/contour_snake.log')
    LOG_MAX_SIZE = int(os.getenv('LOG_MAX_SIZE', 10485760))  # 10MB
    LOG_BACKUP_COUNT = int(os.getenv('LOG_BACKUP_COUNT', 10))
    LOG_TO_FILE = True


class DevelopmentConfig(Config):
    """Development configuration"""
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'DEBUG')


class ProductionConfig(Config):
    """Long training / acceptance runs"""
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')


class TestingConfig(Config):
    """Testing configuration"""
    LOG_LEVEL = 'WARNING'
    LOG_TO_FILE = False


# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


def active_config():
    """Profile selected by SNAKE_ENV"""
    return config.get(os.getenv('SNAKE_ENV', 'default'), DevelopmentConfig)


def _from_dict(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{prefix or 'root'}' must be an object")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key '{prefix}{key}'")
    return cls(**data)


@dataclass
class PipelineConfig:
    """Contour evolution parameters"""
    points: int = 128
    iterations: int = 3
    features: int = 16
    heads: int = 4
    embed: int = 32
    conv_layers: int = 4
    kernel_size: int = 9
    init_shape: str = 'box'
    seed: int = 42

    def validate(self):
        if self.points < 8:
            raise ConfigError(f"pipeline.points must be >= 8, got {self.points}")
        if not 1 <= self.iterations <= 8:
            raise ConfigError(f"pipeline.iterations must be in 1..8, got {self.iterations}")
        if self.features < 1 or self.heads < 1 or self.conv_layers < 1:
            raise ConfigError("pipeline.features, heads and conv_layers must be positive")
        if self.embed % self.heads:
            raise ConfigError(f"pipeline.embed ({self.embed}) must be divisible by heads ({self.heads})")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("pipeline.kernel_size must be a positive odd number")
        if self.init_shape not in ('box', 'ellipse'):
            raise ConfigError(f"pipeline.init_shape must be 'box' or 'ellipse', got '{self.init_shape}'")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data, prefix='pipeline.'):
        return _from_dict(cls, data, prefix)


@dataclass
class TrainConfig:
    """Two-phase training schedule and ablation switches"""
    energy_epochs: int = 40
    snake_epochs: int = 60
    batch_size: int = 8
    lr: float = 1e-3
    lr_decay: float = 0.5
    decay_every: int = 20
    momentum: float = 0.9
    optimizer: str = 'momentum'
    jitter: float = 0.1
    energy_threshold: float = 200.0
    seed: int = 42
    use_demp_dcim: bool = True
    use_amem: bool = True

    def validate(self):
        if self.energy_epochs < 0 or self.snake_epochs < 0:
            raise ConfigError("train epochs must be non-negative")
        if self.batch_size < 1 or self.decay_every < 1:
            raise ConfigError("train.batch_size and train.decay_every must be positive")
        if not self.lr > 0:
            raise ConfigError(f"train.lr must be positive, got {self.lr}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"train.lr_decay must be in (0, 1], got {self.lr_decay}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"train.momentum must be in [0, 1), got {self.momentum}")
        if self.optimizer not in ('momentum', 'adam'):
            raise ConfigError(f"train.optimizer must be 'momentum' or 'adam', got '{self.optimizer}'")
        if not 0 <= self.jitter <= 0.3:
            raise ConfigError(f"train.jitter must be in [0, 0.3], got {self.jitter}")
        if not 0 < self.energy_threshold < 255:
            raise ConfigError("train.energy_threshold must be in (0, 255)")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data, prefix='train.'):
        return _from_dict(cls, data, prefix)


@dataclass
class RunConfig:
    """Merged view of pipeline + training parameters + paths"""
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: str = None
    out_dir: str = None

    def validate(self):
        self.pipeline.validate()
        self.train.validate()
        return self

    def to_dict(self):
        return {
            'pipeline': self.pipeline.to_dict(),
            'train': self.train.to_dict(),
            'data_dir': self.data_dir,
            'out_dir': self.out_dir
        }

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        for key in data:
            if key not in ('pipeline', 'train', 'data_dir', 'out_dir'):
                raise ConfigError(f"unknown config key '{key}'")
        return cls(
            pipeline=PipelineConfig.from_dict(data.get('pipeline', {})),
            train=TrainConfig.from_dict(data.get('train', {})),
            data_dir=data.get('data_dir'),
            out_dir=data.get('out_dir')
        ).validate()

    @classmethod
    def load(cls, path):
        """Read a JSON config file"""
        try:
            with open(path, 'r', encoding='utf-8') as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise DataIOError("config file not found", path=path)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}")
        return cls.from_dict(data)

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write('\n')

    def fingerprint(self):
        """SHA-256 of the model-defining parameters (paths excluded)"""
        payload = json.dumps(
            {'pipeline': self.pipeline.to_dict(), 'train': self.train.to_dict()},
            sort_keys=True, separators=(',', ':')
        )
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()

    def with_seed(self, seed):
        self.pipeline.seed = seed
        self.train.seed = seed
        return self
